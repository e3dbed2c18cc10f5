"""Liver lesion segmentation laboratory.

Data pipeline, UNet/UNet3+ models with attention variants, CE+Dice
training, evaluation metrics (Dice/IoU/HD95/Acc/Pre/Sen/Spe) and
Grad-CAM explanations, runnable at desk scale on synthetic phantoms.
"""

__version__ = "0.1.0"
