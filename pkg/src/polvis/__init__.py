"""Cross-modal face matching: coupled conditional GANs that translate
polarimetric thermal imagery to the visible spectrum, guided by facial
attributes, plus the identification / verification / attribute-prediction
evaluation stack and a synthetic paired-modality benchmark."""

__version__ = "0.1.0"
