"""Lung-MRI quantitative scoring workbench.

Pipeline: NIfTI volume I/O -> lung mask ingestion/segmentation ->
lung-bounded axial slice sampling -> pixel-level disease annotation ->
pixel and grid quantification -> paired statistics.
"""

__version__ = "0.1.0"
