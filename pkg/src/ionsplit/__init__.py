"""
ionsplit - fast two-ion separation toolkit
Designs, simulates and analyzes the separation of a two-ion crystal in a segmented Paul trap.
"""

__version__ = "0.1.0"
