"""Signal layer: STFT, mel, energy, CWT pitch, Griffin-Lim, WAV I/O, the speech oracle and MCD."""

from braillespeech.speech_dsp.core import (
    DEFAULT,
    DspConfig,
    frame_energy,
    griffin_lim,
    istft,
    mcd,
    mean_mcd,
    mel_filterbank,
    mel_spectrogram,
    read_mel,
    spectral_convergence,
    stft,
    write_mel,
)
from braillespeech.speech_dsp.oracle import OracleUtterance, phoneme_inventory, synth_oracle, text_phonemes
from braillespeech.speech_dsp.pitch import PitchSpectrogram, cwt_pitch, inverse_cwt
from braillespeech.speech_dsp.wavio import wav_read, wav_write
