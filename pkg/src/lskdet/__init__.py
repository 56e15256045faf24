"""Locally adaptive steering-kernel features, a linear support tensor machine
and an FFT-accelerated multiscale detector for thermal imagery."""

from .detector import PreparedDetector, ScoreMap, naive_slide, prepare, score_map
from .evaluation import EvalResult, evaluate, kfold, miss_rate_at, read_annotations, write_annotations
from .kernel import gram, mcs, normalize
from .lsk import LskParams, dense_descriptors, regularize, steering_field
from .model import Model, load_model, save_model
from .pca import PcaBasis, extract_features, fit_pca, project, select_dimension
from .pyramid import Detection, detect, fuse_scores, nms, read_detections, write_detections
from .stm import SolverConfig, TrainConfig, TrainingSet, decision, solve_dual, train, train_detector
from .synth import SynthConfig, generate, write_dataset
from .tensor import BoundingBox, integral_image, iou, load_image, save_pgm

__all__ = [
    "BoundingBox",
    "Detection",
    "EvalResult",
    "LskParams",
    "Model",
    "PcaBasis",
    "PreparedDetector",
    "ScoreMap",
    "SolverConfig",
    "SynthConfig",
    "TrainConfig",
    "TrainingSet",
    "decision",
    "dense_descriptors",
    "detect",
    "evaluate",
    "extract_features",
    "fit_pca",
    "fuse_scores",
    "generate",
    "gram",
    "integral_image",
    "iou",
    "kfold",
    "load_image",
    "load_model",
    "mcs",
    "miss_rate_at",
    "naive_slide",
    "nms",
    "normalize",
    "prepare",
    "project",
    "read_annotations",
    "read_detections",
    "regularize",
    "save_model",
    "save_pgm",
    "score_map",
    "select_dimension",
    "solve_dual",
    "steering_field",
    "train",
    "train_detector",
    "write_annotations",
    "write_dataset",
    "write_detections",
]
