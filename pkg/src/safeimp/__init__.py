"""Safety-filtered adaptive impedance control for torque-limited manipulators."""

__version__ = "0.1.0"
