"""Breast-ultrasound lesion segmentation built on a self-contained
float64 autodiff engine: Haar-wavelet denoising and high-frequency
guidance, dual-attention feature fusion, and a four-direction
selective-scan U-shaped backbone."""

__version__ = "0.1.0"
