"""Certified-purity toolchain and governed WebAssembly executor host."""

__version__ = "0.1.0"
