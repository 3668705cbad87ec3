"""Single-image super-resolution with condensing group convolutions.

A dense-block network whose 1x1 layers are pruned in stages during
training, a deconvolutional reconstruction stack, and a global bicubic
residual; plus the training recipe, PSNR/SSIM evaluation and multiply-add
accounting, all on a small numpy autodiff core.
"""

from .autograd import (ConvParams, Tensor, add, concat_channels, conv2d,
                       conv_transpose2d, index_select_channels, leaky_relu,
                       scale, tmean, tsum)
from .checkpoint import (LoadedCheckpoint, load_checkpoint, restore_model,
                         restore_training, save_checkpoint)
from .data import (ImagePlane, PatchPair, bicubic_resize, extract_patches,
                   image_to_luma, read_image, rgb_to_ycbcr, write_png,
                   ycbcr_to_rgb)
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .lgc import CondensingConv, ConvertedLGC
from .metrics import (FlopsReport, MacCounter, count_flops, instrumented_macs,
                      psnr, ssim)
from .model import Model, ModelConfig, build_model, zero_parameters
from .training import (Adam, EpochResult, TrainSchedule, adam_step,
                       charbonnier_loss, cosine_lr, train)

__version__ = "0.1.0"
