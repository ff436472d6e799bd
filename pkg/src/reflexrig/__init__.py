"""reflexrig: hybrid kinematic/physical upper-body animation engine."""

__version__ = "0.1.0"
