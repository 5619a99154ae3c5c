"""Zero-shot time-series forecasting with large language models.

Series are split into low- and high-frequency components, serialized to text,
forecast by an LLM backend, parsed, post-processed and recombined.
"""
from .codec import build_prompt, decode_value, encode_value, parse_output
from .core import ChannelSet, Series, denormalize, load_csv_dataset, max_normalize, split_windows
from .decomposition import FilterSpec, decompose_at, select_cutoff
from .gateway import GenParams, MockBackend, TokenScheme, budget, count_tokens, generate
from .metrics import ks_statistic, mae, mse
from .pipeline import PipelineConfig, run_pipeline
from .postprocess import RefinerConfig, gaussian_match, recombine, refine_low, train_refiner

__version__ = "0.1.0"
