"""Medication set recommendation with two-tower alignment.

Patient records (diagnosis/procedure/symptom texts plus prescription
history) and medications (molecular graphs plus description texts) are
encoded into a joint latent space; per-visit recommendation is inner-product
scoring against every medication, thresholded into a set.
"""

__version__ = "0.1.0"
