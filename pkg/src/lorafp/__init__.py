"""lorafp: a hardware-free LoRa radio-frequency fingerprinting testbed.

Signal path: synthesize impaired preambles (phy), push them through fading
channels (channel), recover and normalize them (frontend), build
channel-independent spectrograms (features), embed them with a
triplet-loss CNN (embedder), then enroll and identify devices with open-set
k-NN (registry, identify). The estimators module exposes the learnable
stages through the scikit-learn fit/transform/predict API, and harness/cli
drive file-based experiments.
"""

from .channel import (AugmentRanges, ChannelRealization, ChannelSpec, add_awgn,
                      apply_channel, augment, exponential_pdp, jakes_fading,
                      realize_channel)
from .embedder import (EmbedderConfig, RffExtractor, TrainConfig, load_model,
                       save_weights, train, triplet_loss, weight_file_hash)
from .errors import (CalibrationError, ConfigError, ContractError,
                     DegeneratePdpError, ImpairmentError, IntegrityError,
                     LorafpError, NoPacketError, NumericalError, TrainingError,
                     VersionMismatchError)
from .estimators import (ChannelIndependentFeaturizer, OpenSetKnnIdentifier,
                         TripletEmbedder)
from .features import (ChannIndSpectrogram, Spectrogram, StftConfig,
                       channel_independent, featurize, spectrogram_db, stft)
from .frames import IqFrame
from .frontend import (SyncResult, compensate_cfo, estimate_cfo,
                       extract_preamble, normalize, preprocess, synchronize)
from .identify import (ClassificationResult, DetectionResult, EvalReport,
                       calibrate_threshold, classify, detect, evaluate,
                       roc_curve)
from .phy import (DEFAULT_CLUSTERS, DeviceProfile, LoraConfig, apply_impairments,
                  make_preamble, make_upchirp, sample_fleet)
from .pipeline import ExtractionResult, extract_fingerprints
from .registry import Registry, RegistryRecord

__version__ = "0.1.0"
