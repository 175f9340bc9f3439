from .nifti import NiftiError, BadMagicError, UnsupportedDtypeError, TruncatedFileError, read_nifti, write_nifti
from .features import FeaturePyramid, FeatureFileError, write_feature_file, read_feature_file
from .report import EvalReport, SubjectMetrics, write_report, write_overlay
from .checkpoint import write_checkpoint, read_checkpoint

__all__ = [
    "NiftiError",
    "BadMagicError",
    "UnsupportedDtypeError",
    "TruncatedFileError",
    "read_nifti",
    "write_nifti",
    "FeaturePyramid",
    "FeatureFileError",
    "write_feature_file",
    "read_feature_file",
    "EvalReport",
    "SubjectMetrics",
    "write_report",
    "write_overlay",
    "write_checkpoint",
    "read_checkpoint",
]
