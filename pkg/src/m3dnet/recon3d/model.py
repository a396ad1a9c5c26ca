"""Self-supervised depth/albedo/view/light decomposition of a face image."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from ..config import ReconConfig
from ..errors import ConfigError, InvalidInputError, NonFiniteError
from . import losses
from .networks import ConfidenceNet, EncoderDecoder, ViewLightNet, build_extractor, extractor_grid, resize_to
from .renderer import LightParams, ViewParams, render

DEPTH_CENTER = 1.0
DEPTH_RANGE = 0.1
CONF_FLOOR = 1e-4
GROUPS = ("albedo_ed", "depth_ed", "conf_head", "viewlight_head")


@dataclass
class ConfidencePair:
    sigma_pixel: torch.Tensor  # (B, 2, H, W)
    sigma_perc: torch.Tensor  # (B, 2, h_k, w_k)


@dataclass
class ReconBundle:
    depth: torch.Tensor
    albedo: torch.Tensor
    confidence: ConfidencePair
    view: ViewParams
    light: LightParams
    recon: torch.Tensor
    recon_flip: torch.Tensor


def _open_bounds(lo: float, hi: float, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Innermost representable values strictly inside (lo, hi) in ``like``'s dtype."""
    lo_t = torch.tensor(lo, dtype=like.dtype, device=like.device)
    hi_t = torch.tensor(hi, dtype=like.dtype, device=like.device)
    lo_in = torch.nextafter(lo_t, hi_t)
    hi_in = torch.nextafter(hi_t, lo_t)
    # float rounding of the literal can land on the wrong side of lo/hi
    while float(lo_in) <= lo:
        lo_in = torch.nextafter(lo_in, hi_t)
    while float(hi_in) >= hi:
        hi_in = torch.nextafter(hi_in, lo_t)
    return lo_in, hi_in


def _require_finite(raw: torch.Tensor, what: str) -> None:
    if not bool(torch.isfinite(raw).all()):
        bad = int((~torch.isfinite(raw)).sum())
        raise NonFiniteError(f"{what}: {bad} non-finite values in network output "
                             f"(shape {tuple(raw.shape)})")


def depth_activation(raw: torch.Tensor) -> torch.Tensor:
    """1 + 0.1 tanh(raw), kept strictly inside (0.9, 1.1) under float rounding."""
    _require_finite(raw, "depth")
    lo, hi = _open_bounds(DEPTH_CENTER - DEPTH_RANGE, DEPTH_CENTER + DEPTH_RANGE, raw)
    return torch.clamp(DEPTH_CENTER + DEPTH_RANGE * torch.tanh(raw), lo, hi)


def albedo_activation(raw: torch.Tensor) -> torch.Tensor:
    """sigmoid(raw), kept strictly inside (0, 1) under float rounding."""
    _require_finite(raw, "albedo")
    lo, hi = _open_bounds(0.0, 1.0, raw)
    return torch.clamp(torch.sigmoid(raw), lo, hi)


def confidence_activation(raw: torch.Tensor) -> torch.Tensor:
    _require_finite(raw, "confidence")
    return F.softplus(raw) + CONF_FLOOR


def view_from_raw(raw: torch.Tensor, max_rotation_deg: float = 60.0,
                  max_translation: float = 0.1) -> ViewParams:
    _require_finite(raw, "view")
    bound = math.radians(max_rotation_deg)
    rotation = raw[:, :3].clamp(-bound, bound)
    translation = torch.tanh(raw[:, 3:6]) * max_translation
    return ViewParams(rotation, translation)


def light_from_raw(raw: torch.Tensor) -> LightParams:
    _require_finite(raw, "light")
    ambient = (torch.tanh(raw[:, 0]) + 1) / 2
    diffuse = (torch.tanh(raw[:, 1]) + 1) / 2
    return LightParams(ambient, diffuse, raw[:, 2:4])


def check_face_image(image: torch.Tensor) -> None:
    if image.dim() != 4 or image.shape[1] != 3:
        raise InvalidInputError(f"expected (B, 3, H, W) images, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h != w or h % 16:
        raise InvalidInputError(f"image must be square with side divisible by 16, got {h}x{w}")
    image = image.detach()
    if not bool(torch.isfinite(image).all()) or float(image.min()) < 0 or float(image.max()) > 1:
        raise InvalidInputError("image values must be finite and in [0, 1]")


class Recon3D(nn.Module):
    """Albedo/depth encoder-decoders plus confidence and view/light heads.

    The four parameter groups (``albedo_ed``, ``depth_ed``, ``conf_head``,
    ``viewlight_head``) are what gets checkpointed. The perceptual feature
    extractor is frozen and rebuilt from config, never trained.
    """

    def __init__(self, cfg: ReconConfig | None = None):
        super().__init__()
        cfg = cfg or ReconConfig()
        cfg.validate()
        self.cfg = cfg
        w = cfg.width
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            size = cfg.image_size
            self.albedo_ed = EncoderDecoder(3, 3, w, size)
            self.depth_ed = EncoderDecoder(3, 1, w, size)
            self.conf_head = ConfidenceNet(3, w, size)
            self.viewlight_head = ViewLightNet(3, w, size)
        self.extractor = build_extractor(cfg.perceptual, cfg.perceptual_width, cfg.seed,
                                         cfg.perceptual_weights)
        self.perc_grid = extractor_grid(self.extractor, cfg.image_size)
        self.step_count = 0
        self.weights_ready = False

    def parameter_groups(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in GROUPS}

    def trainable_parameters(self):
        for module in self.parameter_groups().values():
            yield from module.parameters()

    def _in(self, image: torch.Tensor) -> torch.Tensor:
        check_face_image(image)
        return image * 2 - 1

    def predict_depth(self, image: torch.Tensor) -> torch.Tensor:
        return depth_activation(self.depth_ed(self._in(image)))

    def predict_albedo(self, image: torch.Tensor) -> torch.Tensor:
        return albedo_activation(self.albedo_ed(self._in(image)))

    def predict_confidence(self, image: torch.Tensor) -> ConfidencePair:
        fine, coarse = self.conf_head(self._in(image))
        return ConfidencePair(confidence_activation(fine),
                              confidence_activation(resize_to(coarse, self.perc_grid)))

    def predict_view_light(self, image: torch.Tensor) -> tuple[ViewParams, LightParams]:
        raw_view, raw_light = self.viewlight_head(self._in(image))
        return (view_from_raw(raw_view, self.cfg.max_rotation_deg, self.cfg.max_translation),
                light_from_raw(raw_light))

    def render(self, depth, albedo, view, light) -> torch.Tensor:
        return render(depth, albedo, view, light, self.cfg.fov_deg)

    def forward(self, image: torch.Tensor) -> ReconBundle:
        depth = self.predict_depth(image)
        albedo = self.predict_albedo(image)
        conf = self.predict_confidence(image)
        view, light = self.predict_view_light(image)
        recon = self.render(depth, albedo, view, light)
        recon_flip = self.render(depth.flip(-1), albedo.flip(-1), view, light)
        return ReconBundle(depth, albedo, conf, view, light, recon, recon_flip)

    def losses(self, image: torch.Tensor, bundle: ReconBundle) -> losses.ReconLossTerms:
        lf, lp = self.cfg.lambda_f, self.cfg.lambda_p
        conf = bundle.confidence
        l_pixel = losses.symmetric_pixel_loss(bundle.recon, bundle.recon_flip, image,
                                              conf.sigma_pixel, lf)
        feat_orig = self.extractor(image)
        l_perc = losses.feature_loss(self.extractor(bundle.recon), feat_orig, conf.sigma_perc[:, :1])
        l_perc = l_perc + lf * losses.feature_loss(self.extractor(bundle.recon_flip), feat_orig,
                                                   conf.sigma_perc[:, 1:])
        return losses.total_recon_loss(l_pixel, l_perc, lf, lp)

    def pretrain_step(self, batch: torch.Tensor, optimizer: torch.optim.Optimizer,
                      batch_id: object = None) -> losses.ReconLossTerms:
        """One optimisation step on the reconstruction objective."""
        if getattr(self, "frozen", False):
            raise ConfigError("Recon3D is frozen; pretraining is no longer allowed")
        self.train()
        optimizer.zero_grad(set_to_none=True)
        terms = self.losses(batch, self(batch))
        if not bool(torch.isfinite(terms.l_rec)):
            raise NonFiniteError(f"non-finite reconstruction loss on batch {batch_id!r}: "
                                 f"{terms.as_floats()}")
        terms.l_rec.backward()
        optimizer.step()
        self.step_count += 1
        self.weights_ready = True
        return losses.ReconLossTerms(terms.l_pixel.detach(), terms.l_perc.detach(),
                                     terms.l_rec.detach(), terms.lambda_f, terms.lambda_p)

    def group_state(self) -> dict[str, dict[str, torch.Tensor]]:
        return {name: {k: v.detach().clone() for k, v in mod.state_dict().items()}
                for name, mod in self.parameter_groups().items()}

    def load_group_state(self, groups: dict[str, dict[str, torch.Tensor]]) -> None:
        from ..checkpoint import load_groups_into

        load_groups_into(self.parameter_groups(), groups)
        self.weights_ready = True

    def freeze(self) -> "FrozenRecon3D":
        if not self.weights_ready:
            raise ConfigError("cannot freeze Recon3D before weights exist "
                              "(pretrain it or load a checkpoint first)")
        return FrozenRecon3D(self)


class FrozenRecon3D(nn.Module):
    """Read-only handle around a pretrained :class:`Recon3D`.

    Parameters stop requiring gradients and are tagged so that
    :func:`m3dnet.trainer.make_optimizer` refuses them. Activations stay
    differentiable, so gradients still reach the input image.
    """

    def __init__(self, model: Recon3D):
        super().__init__()
        for p in model.parameters():
            p.requires_grad_(False)
            p._m3d_frozen = True
        model.frozen = True
        model.eval()
        self.model = model

    @property
    def cfg(self) -> ReconConfig:
        return self.model.cfg

    def train(self, mode: bool = True):
        super().train(mode)
        self.model.eval()
        return self

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.model.predict_albedo(image), self.model.predict_depth(image)

    def reconstruct(self, image: torch.Tensor) -> ReconBundle:
        return self.model(image)
