"""Train small transformers on cyclic arithmetic and locate, probe and steer their modular-arithmetic circuits"""
__version__ = "0.1.0"
