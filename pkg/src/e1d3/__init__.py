"""E1D3 U-Net volumetric segmentation."""
