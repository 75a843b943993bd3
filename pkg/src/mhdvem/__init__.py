"""Lowest-order virtual elements for incompressible resistive MHD on polyhedral meshes."""

__version__ = "0.1.0"
