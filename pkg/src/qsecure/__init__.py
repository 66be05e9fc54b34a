"""Quantum-protected record storage and access screening, simulated densely with numpy."""
