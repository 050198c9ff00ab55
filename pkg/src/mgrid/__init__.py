"""Federated medical-image metadata node.

A small site node that accepts mammograms over the DICOM
C-STORE protocol, pseudonymizes them, files them in a virtual file
catalogue, extracts their metadata into a relational store, and answers
XML queries both locally and across a federation of peer nodes.
"""

__version__ = "0.1.0"
