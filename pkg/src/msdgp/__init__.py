"""Multi-speaker regression with deep Gaussian processes.

Speaker conditioning comes either from one-hot codes fed through auxiliary
speaker GPs or from learned per-speaker latent variables.  The package also
ships a synthetic multi-speaker corpus, objective metrics and a CLI
(``msdgp``) that runs the desk-scale experimental protocols.
"""

__version__ = "0.1.0"
