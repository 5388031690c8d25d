"""Human-inspired impedance regulation skill learning, hardware-free."""

__version__ = "0.1.0"
