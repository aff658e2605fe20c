"""Dynamic image reconstruction with a generative manifold model.

A small transposed-convolution generator maps per-frame latent vectors to
complex images; generator weights and latents are fitted jointly to
undersampled multicoil k-space data.
"""
from .backend import BACKEND
from .generator import build_generator, count_params, generate_batch, generate_frame
from .kspace import Dataset, KSpaceFrame, Trajectory
from .metrics import latent_alignment, psnr, ser, ssim
from .phantom import PhantomConfig, acquire
from .trainer import TrainConfig, train

__version__ = "0.1.0"
