"""Effective Hamiltonians of one-dimensional viscous Hamilton-Jacobi equations."""
