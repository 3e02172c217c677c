"""megasplat: memory-efficient 4D Gaussian splatting on the CPU."""

__version__ = "0.1.0"
