"""Fiber-reinforced rods: micro problems, nonlocal rod limit and periodic homogenization."""

__version__ = "0.1.0"
