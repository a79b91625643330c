"""voxprofile: speaker-profiling toolkit.

Acoustic feature extraction (MFCC, mel, chroma, tonnetz, spectral
contrast), a minimal reverse-mode autodiff engine, single- and
multi-task neural models for gender/accent/age/speaker prediction, and
reproducible experiment presets over TIMIT-style corpora.
"""

from .audio_io import AudioClip, read_audio, write_sphere, write_wav
from .autodiff import (Adam, OptimizerState, Tensor, adam_step, backward,
                       conv1d, dropout, l1_loss, linear, lstm_forward,
                       maxpool1d, mse_loss, relu, softmax,
                       softmax_cross_entropy)
from .dataset import (ACCENTS, GENDERS, Manifest, ScanResult, SpeakerRecord,
                      accent_code, gender_code, oversample_balanced,
                      parse_manifest, scan_timit_layout, split_for_speaker_id,
                      write_manifest)
from .dsp import (FIVE_TYPES, FeatureConfig, FeatureMatrix, FeatureVector,
                  chroma, extract_set, feature_dim, hz_to_mel, mel_features,
                  mel_filterbank, mel_to_hz, mfcc, spectral_contrast,
                  stft_power, time_average, tonnetz)
from .errors import (ConfigError, DataError, DecodeError, NumericError,
                     ParseError, ShapeError, ValidationError, VoxprofileError)
from .estimators import (FeatureExtractor, MultiTaskNet, NetClassifier,
                         NetRegressor)
from .experiments import PRESETS, ExperimentPreset, run_experiment
from .feature_cache import build_cache, extract_features, read_cache, write_cache
from .models import (LossWeights, ModelSpec, build_model, build_mlp,
                     build_multitask_cnn_lstm, build_multitask_mlp,
                     build_single_cnn, build_single_lstm, combined_loss,
                     expected_param_count, load_checkpoint, param_count,
                     save_checkpoint, spec_hash)
from .synth import generate_corpus
from .training import (DataBundle, GlobalStandardizer, Metrics, Split,
                       TrainConfig, classification_metrics,
                       evaluate_classification, evaluate_regression,
                       global_standardize, pad_batch, regression_metrics,
                       run_comparison, train)

__version__ = "0.1.0"
