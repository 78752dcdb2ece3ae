"""Active-learning experiment engine comparing dependency-aware and
independent maximum likelihood estimation, with a service and CLI on top."""

__version__ = "0.1.0"
