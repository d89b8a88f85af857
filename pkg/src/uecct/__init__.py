"""Unified code-agnostic transformer decoder for linear block codes."""

__version__ = "0.1.0"
