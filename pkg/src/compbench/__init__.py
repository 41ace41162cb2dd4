"""Desk-scale workbench for compliant teleoperation and learned
variable-stiffness manipulation."""

__version__ = "0.1.0"
