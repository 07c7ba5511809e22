"""rtlab: a recurrent single-object tracker lab.

Pure-NumPy tape autodiff, three recurrent tracker variants (plain stack,
residual stack, dense block), a curriculum trainer, a synthetic sequence
generator, and a one-pass evaluation bench.
"""

__version__ = "0.1.0"
