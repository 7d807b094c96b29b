"""2D linear elasticity FEM in quantized tensor-train format.

Solves plane elasticity on partitioned quadrilateral domains with every
operator and vector kept in QTT format over Z-ordered degrees of
freedom, plus an in-repo dense conforming FEM oracle for verification.
"""

__version__ = "0.1.0"
