"""Instance-segmentation workbench for ground-level thermographic building surveys.

Ingests COCO-style annotated thermal images, fine-tunes a pluggable
region-proposal segmentation backend under a progressive-data ablation
protocol, evaluates with mAP 50-95, and post-processes predictions into
heat-loss crops and cleaned images served over HTTP.
"""

__version__ = "0.1.0"
