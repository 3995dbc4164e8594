"""Streaming temporal event segmentation via self-supervised prediction.

A grid of per-location recurrent predictors, focused by additive attention,
learns online (one optimizer step per frame) to forecast the next feature
frame; spikes in its prediction error mark event boundaries. Gating turns
the error trace into detected intervals, and the evaluation helpers score
them frame-by-frame and activity-by-activity.
"""

from .attention import (AttentionParams, NumericError, attention_backward,
                        attention_forward, init_attention)
from .checkpoint import (CheckpointError, load_checkpoint,
                         load_checkpoint_file, save_checkpoint,
                         save_checkpoint_file)
from .evaluation import (ActivityMetrics, AnnotationSet, FrameMetrics,
                         RocPoint, RocTables, activity_level, align_signal,
                         frame_level, hungarian_match, interval_overlap,
                         label_breakdown, load_annotations,
                         load_detections_csv, rasterize, roc_sweep,
                         write_detections_csv)
from .feature_stream import (EventInterval, FeatureFrame, InvalidFrameError,
                             Regime, Segment, StreamFormatError, StreamHeader,
                             SyntheticScenario, TruncatedStreamError,
                             fps_to_rational, generate_synthetic,
                             load_scenario, parse_scenario, read_all,
                             read_header, read_stream, read_stream_file,
                             write_stream, write_stream_file)
from .gating import (GateConfig, StreamingGate, detect_events, extract_events,
                     gate, prepare_signal, smooth_adaptive, sweep_detections)
from .losses import (LossSample, compute_both, motion_weighted_loss,
                     prediction_loss)
from .predictor import (LstmParams, PredictorState, init_lstm,
                        predictor_backward, predictor_forward,
                        sample_dropout_mask)
from .trainer import (AdamState, DivergenceError, ModelParams,
                      ParallelRunError, RunOutputs, TrainerConfig,
                      TrainingSnapshot, adam_step, init_model, run_parallel,
                      run_stream)

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "NumericError", "attention_forward",
    "attention_backward", "init_attention",
    "LstmParams", "PredictorState", "init_lstm", "predictor_forward",
    "predictor_backward", "sample_dropout_mask",
    "LossSample", "prediction_loss", "motion_weighted_loss", "compute_both",
    "GateConfig", "StreamingGate", "smooth_adaptive", "gate",
    "extract_events", "prepare_signal", "detect_events", "sweep_detections",
    "AnnotationSet", "FrameMetrics", "ActivityMetrics", "RocPoint",
    "RocTables", "frame_level", "hungarian_match", "activity_level",
    "interval_overlap", "label_breakdown", "rasterize", "align_signal",
    "roc_sweep", "load_annotations", "load_detections_csv",
    "write_detections_csv",
    "StreamHeader", "FeatureFrame", "EventInterval", "Regime", "Segment",
    "SyntheticScenario", "StreamFormatError", "TruncatedStreamError",
    "InvalidFrameError", "fps_to_rational", "generate_synthetic",
    "parse_scenario", "load_scenario", "read_header", "read_stream",
    "read_stream_file", "read_all", "write_stream", "write_stream_file",
    "TrainerConfig", "ModelParams", "AdamState", "TrainingSnapshot",
    "RunOutputs", "DivergenceError", "ParallelRunError", "init_model",
    "adam_step", "run_stream", "run_parallel",
    "CheckpointError", "save_checkpoint", "save_checkpoint_file",
    "load_checkpoint", "load_checkpoint_file",
    "__version__",
]
