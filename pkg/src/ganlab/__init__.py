"""Toy-scale experiments on the training dynamics of GANs with singular data.

Subpackages: ``diffcore`` (autodiff and MLPs), ``manifolds`` (low-dimensional
distributions and noise), ``divergence`` (grid divergences and exact OT),
``gandyn`` (losses, discriminator training, gradient probes) and
``labcli`` (the experiment runner).
"""
__version__ = "0.1.0"
