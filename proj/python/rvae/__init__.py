"""Recurrent VAE speech priors and VEM/PEEM speech enhancement."""

from ._core import (
    SAMPLE_RATE,
    WINDOW_SIZE,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IoError,
    Model,
    enhance,
    gradient_suite,
    istft,
    load_checkpoint,
    mix_at_snr,
    read_wav,
    si_sdr,
    stft,
    synth_noise,
    synth_utterance,
    train,
    write_wav,
)

__all__ = [name for name in dir() if not name.startswith("_")]
