"""Prior-fitted optimizer policies: a learned coordinate-wise step-size controller."""
__version__ = "0.1.0"
