"""From a waveform to four 128 x 1407 log-mel matrices.

Audio is resampled to 12 kHz and cut into four 30 second clips.  Each clip
becomes a dB-scaled mel power spectrogram with hop 256, which gives 1407
frames per clip.
"""

# %%
import numpy as np

from mmgenre import audio
from mmgenre.data import GENRES
from mmgenre.encoders import make_encoder

sr = 44_100
t = np.arange(100 * sr) / sr
wave = 0.3 * np.sin(2 * np.pi * 440 * t) + 0.1 * np.sin(2 * np.pi * 1760 * t)
clip = audio.AudioClip(wave, sr)

# %% [markdown]
# A 100 s trailer is too short for four back-to-back clips.  Three start at
# 0, 30 and 60 s; the fourth comes from a seeded random offset.

# %%
clips = audio.select_clips(clip, rng_seed=7)
print("clip lengths (s):", [round(c.duration, 2) for c in clips])

spec = audio.trailer_spectrogram(clip, rng_seed=7)
print("spectrogram stack:", spec.shape)

# %% [markdown]
# The 440 Hz tone lands in the mel band whose centre is closest to it.

# %%
centers = audio.mel_filter_centers(fmax=6000.0)
loudest = spec[0].mean(axis=1).argmax()
print(f"loudest band {loudest}, centre {centers[loudest]:.0f} Hz")

silent = audio.trailer_spectrogram(audio.AudioClip(np.zeros(12_000 * 5), 12_000))
print("silence floors at", np.unique(silent), "dB")

# %% [markdown]
# The frames feed the same sequence classifiers as text and video.

# %%
model = make_encoder("audio", len(GENRES), seed=0)
print("audio logits:", audio.encode_audio(spec, model)[:4].round(3), "...")
