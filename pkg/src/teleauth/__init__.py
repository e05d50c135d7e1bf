"""Continuous operator authentication from kinematic streams.

Per-operator, per-gesture left-right GMM-HMMs are chained through a gesture
grammar and decoded with token passing over a sliding window; the operator
whose network scores the window highest is the authenticated one.
"""

from .auth import (AuthDecision, LikelihoodTrace, OperatorProfile, authenticate_window,
                   build_profiles, response_time, stream_authenticate, window_count,
                   window_length)
from .config import RunConfig
from .data import (Trial, load_trial, save_trial, segment_by_labels, splice_attack,
                   synth_dataset, synth_operator, synth_trial)
from .decoder import (DecodingNetwork, GestureLinkRecord, GrammarGraph, Token,
                      builtin_grammar, compile_network, decode_network, decode_single,
                      load_grammar, parse_grammar, recognize_gesture, traceback)
from .errors import (ConfigurationError, InvalidModelError, ParseError, SchemaError,
                     SegmentationError, TeleauthError, TrainingDataError, TrainingError,
                     UsageError)
from .evaluation import (AttackReport, ConfusionMatrix, EvalResult, Fold, attack_eval, evaluate,
                         loto_folds, run_attacks, sweep, write_report)
from .hmm import (GestureHmm, Segment, TrainReport, baum_welch_step, forward_log_likelihood,
                  init_from_segments, load_model, new_left_right, save_model, train, validate)
from .numerics import (GaussianComponent, Mixture, gaussian_log_pdf, log_sum_exp,
                       mixture_log_pdf)

__version__ = "0.1.0"
