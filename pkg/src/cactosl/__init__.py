"""Actor-critic learning guided by DDP trajectory optimization, with Sobolev critic training."""

__version__ = "0.1.0"
