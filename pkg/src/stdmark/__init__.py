"""White-box DNN weight watermarking with spread-spectrum and ST-DM regularizers."""
__version__ = "0.1.0"
