"""The stroke-type transformer family.

Five composable variants share one backbone: dedicated temporal-conv
embedders per modality stream, a first transformer encoder per modality,
per-player cross attention that reads the shuttle trajectory latent, a
second encoder over each player's fused frame sequence, and an MLP head.
The enhancement modules are position-conditioned pose gains (all variants
but BST-0), a learned per-channel gate that cleans the trajectory token
(CG variants) and a cosine-similarity player weighting (AP variants).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import N_BONES, N_JOINTS, N_PLAYERS
from .errors import ConfigError, ValidationError

VARIANTS = ("BST-0", "BST", "BST-CG", "BST-AP", "BST-CG-AP")

TOP, BOTTOM = 0, 1  # player slots; top is "blue", bottom is "green"


def normalize_variant(name: str) -> str:
    canon = name.strip().upper().replace("_", "-")
    if canon == "BST0":
        canon = "BST-0"
    if canon not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return canon


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and variant switches."""

    seq_len: int
    n_classes: int
    variant: str = "BST"
    d_model: int = 64
    d_attn: int = 32
    n_heads: int = 8
    n_layers_trans1: int = 2
    n_layers_trans2: int = 2
    tcn_channels: tuple[int, ...] = ()  # empty -> (d_model // 2, d_model)
    tcn_kernel_size: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        object.__setattr__(self, "tcn_channels", tuple(self.tcn_channels))
        for name in (
            "seq_len",
            "n_classes",
            "d_model",
            "d_attn",
            "n_heads",
            "n_layers_trans1",
            "n_layers_trans2",
            "tcn_kernel_size",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.tcn_kernel_size % 2 == 0:
            raise ConfigError("tcn_kernel_size must be odd to keep frame alignment")
        if self.tcn_channels and self.tcn_channels[-1] != self.d_model:
            raise ConfigError(
                f"last TCN channel width {self.tcn_channels[-1]} must equal "
                f"d_model {self.d_model}"
            )

    @property
    def use_positions(self) -> bool:
        return self.variant != "BST-0"

    @property
    def use_ppf(self) -> bool:
        return self.variant != "BST-0"

    @property
    def use_cg(self) -> bool:
        return self.variant in ("BST-CG", "BST-CG-AP")

    @property
    def use_ap(self) -> bool:
        return self.variant in ("BST-AP", "BST-CG-AP")

    def embedder_channels(self) -> tuple[int, ...]:
        return self.tcn_channels or (self.d_model // 2, self.d_model)

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "n_classes": self.n_classes,
            "variant": self.variant,
            "d_model": self.d_model,
            "d_attn": self.d_attn,
            "n_heads": self.n_heads,
            "n_layers_trans1": self.n_layers_trans1,
            "n_layers_trans2": self.n_layers_trans2,
            "tcn_channels": list(self.tcn_channels),
            "tcn_kernel_size": self.tcn_kernel_size,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "tcn_channels" in d:
            d["tcn_channels"] = tuple(d["tcn_channels"])
        return cls(**d)


class AttentionRecord(NamedTuple):
    """One attention application captured for inspection."""

    weights: Tensor  # (B, H, S_q, S_k), pre-dropout
    key_mask: Tensor | None  # (B, S_k) bool, None when nothing is masked


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with per-head width d_attn.

    Queries and keys/values may come from different sequences; masked keys
    receive -inf scores and therefore exactly zero weight.
    """

    def __init__(self, d_model: int, d_attn: int, n_heads: int, dropout: float):
        super().__init__()
        width = d_attn * n_heads
        self.w_q = nn.Linear(d_model, width)
        self.w_k = nn.Linear(d_model, width)
        self.w_v = nn.Linear(d_model, width)
        self.w_o = nn.Linear(width, d_model)
        self.drop = nn.Dropout(dropout)
        self.n_heads = n_heads
        self.d_attn = d_attn

    def forward(
        self,
        query_src: Tensor,
        kv_src: Tensor,
        key_mask: Tensor | None = None,
        attn_sink: list | None = None,
    ) -> Tensor:
        if query_src.shape[0] != kv_src.shape[0]:
            raise ValidationError("query/key batch sizes differ")
        b, s_q, _ = query_src.shape
        s_k = kv_src.shape[1]
        if key_mask is not None and key_mask.shape != (b, s_k):
            raise ValidationError(
                f"key mask shape {tuple(key_mask.shape)} does not match "
                f"key sequence ({b}, {s_k})"
            )

        def split(x: Tensor, proj: nn.Linear, s: int) -> Tensor:
            return proj(x).view(b, s, self.n_heads, self.d_attn).transpose(1, 2)

        q = split(query_src, self.w_q, s_q)
        k = split(kv_src, self.w_k, s_k)
        v = split(kv_src, self.w_v, s_k)

        scores = (q @ k.transpose(-1, -2)) * self.d_attn**-0.5
        # scores: (b, h, s_q, s_k)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = scores.softmax(dim=-1)
        if attn_sink is not None:
            attn_sink.append(AttentionRecord(weights.detach(), key_mask))
        out = self.drop(weights) @ v
        out = out.transpose(1, 2).reshape(b, s_q, self.n_heads * self.d_attn)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, d_model),
            nn.Dropout(dropout),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class TransformerLayer(nn.Module):
    """Pre-norm residual self-attention followed by a pre-norm FFN."""

    def __init__(self, d_model: int, d_attn: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, d_attn, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, 4 * d_model, dropout)

    def forward(
        self,
        x: Tensor,
        key_mask: Tensor | None = None,
        attn_sink: list | None = None,
    ) -> Tensor:
        z = self.norm1(x)
        x = x + self.attn(z, z, key_mask, attn_sink)
        x = x + self.ffn(self.norm2(x))
        return x


class SequenceEncoder(nn.Module):
    """Transformer encoder with a prepended class token.

    A learnable positional embedding of length seq_len + 1 is added after
    the class token; padded frames are excluded from attention through the
    key mask (the class token itself is always attendable).
    """

    def __init__(
        self,
        d_model: int,
        d_attn: int,
        n_heads: int,
        n_layers: int,
        seq_len: int,
        dropout: float,
    ):
        super().__init__()
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d_model))
        self.pos_embed = nn.Parameter(torch.zeros(1, seq_len + 1, d_model))
        self.layers = nn.ModuleList(
            TransformerLayer(d_model, d_attn, n_heads, dropout)
            for _ in range(n_layers)
        )
        self.seq_len = seq_len

    def forward(
        self,
        x: Tensor,
        mask: Tensor,
        attn_sink: list | None = None,
    ) -> tuple[Tensor, Tensor]:
        b, length, _ = x.shape
        if length != self.seq_len:
            raise ValidationError(
                f"sequence length {length} does not match encoder length "
                f"{self.seq_len}"
            )
        x = torch.cat([self.cls_token.expand(b, -1, -1), x], dim=1)
        x = x + self.pos_embed
        key_mask = torch.cat(
            [torch.ones(b, 1, dtype=torch.bool, device=mask.device), mask], dim=1
        )
        for layer in self.layers:
            x = layer(x, key_mask, attn_sink)
        return x[:, 0], x[:, 1:]


class TemporalConvEmbedder(nn.Module):
    """Centered (non-causal) 1D conv stack mapping a modality stream to
    d_model-wide frame latents; masked frames are zeroed at input and
    output."""

    def __init__(
        self,
        in_dim: int,
        channels: tuple[int, ...],
        kernel_size: int,
        dropout: float,
    ):
        super().__init__()
        layers: list[nn.Module] = []
        for i, out_ch in enumerate(channels):
            in_ch = in_dim if i == 0 else channels[i - 1]
            dilation = 2 * i + 1
            layers += [
                nn.Conv1d(
                    in_ch,
                    out_ch,
                    kernel_size,
                    padding=(kernel_size - 1) * dilation // 2,
                    dilation=dilation,
                ),
                nn.GELU(),
                nn.Dropout(dropout),
            ]
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        # x: (b, t, in_dim) -> (b, t, channels[-1])
        keep = mask.to(x.dtype).unsqueeze(-1)
        x = x * keep
        x = self.net(x.transpose(1, 2)).transpose(1, 2)
        return x * keep


class PosePositionFusion(nn.Module):
    """Per-joint gain coefficients derived from a player's court position.

    The MLP maps each frame's (x, y) court position to one coefficient per
    joint, broadcast over the two coordinates of that joint.
    """

    def __init__(self, d_model: int, n_joints: int = N_JOINTS):
        super().__init__()
        hidden = 2 * d_model
        self.mlp = nn.Sequential(
            nn.Linear(2, hidden),
            nn.GELU(),
            nn.Linear(hidden, n_joints),
        )

    def coefficients(self, positions: Tensor) -> Tensor:
        return self.mlp(positions)

    def forward(self, joints: Tensor, positions: Tensor) -> Tensor:
        # joints: (b, t, J, 2), positions: (b, t, 2)
        return joints * self.coefficients(positions).unsqueeze(-1)


class CleanGate(nn.Module):
    """Per-channel sigmoid gate over the trajectory token.

    The gate score is a learned bilinear interaction between each player
    token and the trajectory token, so channels dominated by the opponent
    exchange can be suppressed.  ``gate_override`` substitutes a fixed gate
    tensor (diagnostics; e.g. all-ones turns the module into identity).
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.blue_weight = nn.Parameter(torch.zeros(d_model))
        self.green_weight = nn.Parameter(torch.zeros(d_model))
        self.bias = nn.Parameter(torch.zeros(d_model))
        self.gate_override: Tensor | None = None

    def forward(
        self, overall: Tensor, blue: Tensor, green: Tensor
    ) -> tuple[Tensor, Tensor]:
        score = (
            self.blue_weight * blue * overall
            + self.green_weight * green * overall
            + self.bias
        )
        gate = torch.sigmoid(score)
        if self.gate_override is not None:
            gate = self.gate_override.to(overall.dtype)
        return gate * overall, gate


def aim_player(
    overall: Tensor, blue: Tensor, green: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Cosine-correlation weighting of the two player tokens.

    The cosine gap between (overall, blue) and (overall, green) lies in
    [-2, 2]; mapping it through (gap + 2) / 4 yields alpha in [0, 1] on
    the blue token, 1 - alpha on the green one.  Zero-norm tokens get a
    cosine of 0.
    """
    gap = F.cosine_similarity(overall, blue, dim=-1) - F.cosine_similarity(
        overall, green, dim=-1
    )
    alpha = (gap + 2.0) / 4.0
    return alpha, alpha.unsqueeze(-1) * blue, (1.0 - alpha).unsqueeze(-1) * green


class BST(nn.Module):
    """Stroke-type classifier over pose, trajectory and position streams."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, d_a, h, p = config.d_model, config.d_attn, config.n_heads, config.dropout
        channels = config.embedder_channels()
        if channels[-1] != config.d_model:
            raise ConfigError(
                f"TCN output width {channels[-1]} must equal d_model {d}"
            )
        kernel = config.tcn_kernel_size
        pose_in = (N_JOINTS + N_BONES) * 2

        self.pose_embed = nn.ModuleList(
            TemporalConvEmbedder(pose_in, channels, kernel, p)
            for _ in range(N_PLAYERS)
        )
        self.shuttle_embed = TemporalConvEmbedder(2, channels, kernel, p)
        self.pose_encoder = SequenceEncoder(
            d, d_a, h, config.n_layers_trans1, config.seq_len, p
        )
        self.shuttle_encoder = SequenceEncoder(
            d, d_a, h, config.n_layers_trans1, config.seq_len, p
        )
        self.pose_cross = nn.ModuleList(
            MultiHeadAttention(d, d_a, h, p) for _ in range(N_PLAYERS)
        )
        if config.use_positions:
            self.ppf = PosePositionFusion(d)
            self.position_embed = nn.ModuleList(
                TemporalConvEmbedder(2, channels, kernel, p)
                for _ in range(N_PLAYERS)
            )
            self.position_encoder = SequenceEncoder(
                d, d_a, h, config.n_layers_trans1, config.seq_len, p
            )
            self.position_cross = nn.ModuleList(
                MultiHeadAttention(d, d_a, h, p) for _ in range(N_PLAYERS)
            )
        self.fused_encoder = SequenceEncoder(
            d, d_a, h, config.n_layers_trans2, config.seq_len, p
        )
        if config.use_cg:
            self.clean_gate = CleanGate(d)
        head_in = (2 if config.variant == "BST-AP" else 3) * d
        self.head_norm = nn.LayerNorm(head_in)
        self.head = nn.Sequential(
            nn.Linear(head_in, 4 * d),
            nn.GELU(),
            nn.Dropout(p),
            nn.Linear(4 * d, config.n_classes),
        )
        self.reset_parameters()

    @torch.no_grad()
    def reset_parameters(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Conv1d):
                nn.init.xavier_normal_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, SequenceEncoder):
                nn.init.normal_(module.cls_token, std=0.02)
                nn.init.normal_(module.pos_embed, std=0.02)
            elif isinstance(module, CleanGate):
                nn.init.normal_(module.blue_weight, std=0.02)
                nn.init.normal_(module.green_weight, std=0.02)
                nn.init.zeros_(module.bias)

    def _check_inputs(self, joints, bones, shuttle, positions, mask) -> None:
        b, length = mask.shape
        expected = {
            "joints": (b, N_PLAYERS, length, N_JOINTS, 2),
            "bones": (b, N_PLAYERS, length, N_BONES, 2),
            "shuttle": (b, length, 2),
            "positions": (b, N_PLAYERS, length, 2),
        }
        for name, tensor in (
            ("joints", joints),
            ("bones", bones),
            ("shuttle", shuttle),
            ("positions", positions),
        ):
            if tuple(tensor.shape) != expected[name]:
                raise ValidationError(
                    f"{name} shape {tuple(tensor.shape)}, expected {expected[name]}"
                )
        if length != self.config.seq_len:
            raise ValidationError(
                f"sample length {length} does not match config.seq_len "
                f"{self.config.seq_len}"
            )

    def forward(
        self,
        joints: Tensor,
        bones: Tensor,
        shuttle: Tensor,
        positions: Tensor,
        mask: Tensor,
        *,
        return_detail: bool = False,
        attn_sink: list | None = None,
    ):
        """Class probabilities (b, n_classes); with ``return_detail`` also a
        dict of intermediate tokens and coefficients."""
        self._check_inputs(joints, bones, shuttle, positions, mask)
        cfg = self.config
        mask = mask.bool()

        shuttle_lat = self.shuttle_embed(shuttle, mask)
        overall_token, shuttle_seq = self.shuttle_encoder(
            shuttle_lat, mask, attn_sink
        )

        player_tokens = []
        for player in range(N_PLAYERS):
            player_joints = joints[:, player]
            if cfg.use_ppf:
                player_joints = self.ppf(player_joints, positions[:, player])
            pose_feat = torch.cat(
                [player_joints.flatten(2), bones[:, player].flatten(2)], dim=-1
            )
            pose_lat = self.pose_embed[player](pose_feat, mask)
            _, pose_seq = self.pose_encoder(pose_lat, mask, attn_sink)
            fused = self.pose_cross[player](pose_seq, shuttle_seq, mask, attn_sink)
            if cfg.use_positions:
                pos_lat = self.position_embed[player](positions[:, player], mask)
                _, pos_seq = self.position_encoder(pos_lat, mask, attn_sink)
                fused = fused + self.position_cross[player](
                    pos_seq, shuttle_seq, mask, attn_sink
                )
            token, _ = self.fused_encoder(fused, mask, attn_sink)
            player_tokens.append(token)
        blue, green = player_tokens[TOP], player_tokens[BOTTOM]

        gate = None
        trajectory_token = overall_token
        if cfg.use_cg:
            trajectory_token, gate = self.clean_gate(overall_token, blue, green)

        alpha = None
        if cfg.use_ap:
            alpha, blue_in, green_in = aim_player(trajectory_token, blue, green)
        else:
            blue_in, green_in = blue, green

        if cfg.variant == "BST-AP":
            head_input = torch.cat([blue_in, green_in], dim=-1)
        else:
            head_input = torch.cat([trajectory_token, blue_in, green_in], dim=-1)
        logits = self.head(self.head_norm(head_input))
        probs = logits.softmax(dim=-1)

        if not return_detail:
            return probs
        detail = {
            "logits": logits,
            "head_input": head_input,
            "overall_token": overall_token,
            "trajectory_token": trajectory_token,
            "player_tokens": torch.stack(player_tokens, dim=1),
            "gate": gate,
            "alpha": alpha,
        }
        return probs, detail

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig, seed: int | None = None) -> BST:
    """Construct a model, optionally with seeded parameter initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return BST(config)
