"""Self-interpretable GNN: explainer → encoder → classifier.

The model scores every directed edge from node embeddings of a first
encoder pass, masks the graph with those scores, re-encodes, pools, and
classifies.  Feeding a previous mask back in as the first pass's edge
weights realizes re-explanation.

Training uses hand-written reverse-mode gradients through both encoder
passes (the two passes share weights, so their parameter gradients
accumulate).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelFormatError, TrainingError
from .graphs import Dataset, Graph, check_mask
from .nn import (AdamState, GinLayerParams, MlpParams, adam_step,
                 gin_layer_backward, gin_layer_forward, gumbel_sigmoid,
                 init_mlp, mlp_backward, mlp_forward, pool_mean, sigmoid)
from .rng import RngStream

MODEL_VERSION = 1
OBJECTIVES = ("size_constrained", "kl_bernoulli")


class PassCounter:
    """Counts scoring and prediction forward passes for overhead accounting."""

    def __init__(self):
        self.scoring = 0
        self.prediction = 0

    def reset(self):
        self.scoring = 0
        self.prediction = 0


PASS_COUNTER = PassCounter()


@dataclass(frozen=True)
class ArchDescriptor:
    """Shape and objective hyper-parameters of one SI-GNN."""

    feature_dim: int
    encoder_dims: tuple[int, ...] = (16, 16)
    explainer_hidden: tuple[int, ...] = (16, 16)
    classifier_hidden: tuple[int, ...] = (16, 16)
    n_classes: int = 2
    objective: str = "kl_bernoulli"
    beta: float = 0.05
    prior_r: float = 0.5
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "encoder_dims", tuple(int(d) for d in self.encoder_dims))
        object.__setattr__(self, "explainer_hidden",
                           tuple(int(d) for d in self.explainer_hidden))
        object.__setattr__(self, "classifier_hidden",
                           tuple(int(d) for d in self.classifier_hidden))
        dims = (self.feature_dim, *self.encoder_dims, *self.explainer_hidden,
                *self.classifier_hidden)
        if any(d < 1 for d in dims):
            raise ConfigError("all layer dimensions must be >= 1")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not (0.0 < self.prior_r < 1.0):
            raise ConfigError(f"prior_r must be in (0, 1), got {self.prior_r}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")

    @property
    def embed_dim(self) -> int:
        return self.encoder_dims[-1]


def desk_arch(feature_dim: int = 4, **overrides) -> ArchDescriptor:
    """Small architecture for fast CPU experiments."""
    return ArchDescriptor(feature_dim=feature_dim, **overrides)


def paper_arch(feature_dim: int = 4, **overrides) -> ArchDescriptor:
    """Full-size preset: 64-dim encoder, (256, 64) explainer, (64, 64) classifier."""
    overrides.setdefault("encoder_dims", (64, 64))
    overrides.setdefault("explainer_hidden", (256, 64))
    overrides.setdefault("classifier_hidden", (64, 64))
    return ArchDescriptor(feature_dim=feature_dim, **overrides)


@dataclass(eq=False)
class SiGnnModel:
    arch: ArchDescriptor
    encoder: list[GinLayerParams]
    explainer: MlpParams
    classifier: MlpParams

    def clone(self) -> "SiGnnModel":
        return copy.deepcopy(self)


def init_model(arch: ArchDescriptor, rng: RngStream | int) -> SiGnnModel:
    if not isinstance(rng, RngStream):
        rng = RngStream(rng)
    encoder = []
    d_in = arch.feature_dim
    for li, d_out in enumerate(arch.encoder_dims):
        inner = init_mlp([d_in, d_out, d_out], rng.child(0, li),
                         final_activation="relu")
        encoder.append(GinLayerParams(eps=np.zeros(()), inner_mlp=inner))
        d_in = d_out
    explainer = init_mlp([2 * arch.embed_dim, *arch.explainer_hidden, 1],
                         rng.child(1))
    # keep initial scores near 0.5 so the mask starts uninformative
    explainer.layers[-1].weight *= 0.1
    classifier = init_mlp([arch.embed_dim, *arch.classifier_hidden, arch.n_classes],
                          rng.child(2))
    return SiGnnModel(arch=arch, encoder=encoder, explainer=explainer,
                      classifier=classifier)


def named_tensors(model: SiGnnModel) -> dict[str, np.ndarray]:
    """Live views of every parameter under its stable serialized name."""
    out: dict[str, np.ndarray] = {}
    for li, layer in enumerate(model.encoder):
        out[f"encoder.{li}.eps"] = layer.eps
        for mi, aff in enumerate(layer.inner_mlp.layers):
            out[f"encoder.{li}.mlp.{mi}.weight"] = aff.weight
            out[f"encoder.{li}.mlp.{mi}.bias"] = aff.bias
    for mi, aff in enumerate(model.explainer.layers):
        out[f"explainer.{mi}.weight"] = aff.weight
        out[f"explainer.{mi}.bias"] = aff.bias
    for mi, aff in enumerate(model.classifier.layers):
        out[f"classifier.{mi}.weight"] = aff.weight
        out[f"classifier.{mi}.bias"] = aff.bias
    return out


def zero_grads(model: SiGnnModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in named_tensors(model).items()}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, label: int):
    """Scalar CE and its gradient w.r.t. the logits row."""
    z = logits - logits.max()
    lse = np.log(np.exp(z).sum())
    ce = float(lse - z[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return ce, grad


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def _encode(model: SiGnnModel, graph: Graph, edge_weights: np.ndarray,
            dropout_masks=None):
    h = graph.node_features
    caches = []
    for li, layer in enumerate(model.encoder):
        dm = dropout_masks[li] if dropout_masks is not None else None
        h, c = gin_layer_forward(layer, h, graph.incidence, edge_weights, dm)
        caches.append(c)
    return h, caches


def _edge_logits(model: SiGnnModel, h: np.ndarray, graph: Graph,
                 dropout_masks=None):
    inc = graph.incidence
    u = np.concatenate([h[inc.src], h[inc.dst]], axis=1)
    out, cache = mlp_forward(model.explainer, u, dropout_masks)
    return out[:, 0], (u, cache)


def _classify(model: SiGnnModel, h: np.ndarray):
    z = pool_mean(h)
    logits, cache = mlp_forward(model.classifier, z[None, :])
    return logits[0], z, cache


@dataclass(eq=False)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    predicted_class: int


@dataclass(eq=False)
class ForwardTrace:
    node_embeddings: np.ndarray
    edge_logits: np.ndarray
    soft_mask: np.ndarray
    sampled_mask: np.ndarray | None
    graph_embedding: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ConfigError("class probabilities must sum to 1")


def compute_edge_scores(model: SiGnnModel, graph: Graph,
                        input_edge_weights: np.ndarray | None = None) -> np.ndarray:
    """Soft edge scores in (0, 1) from one deterministic scoring pass.

    The encoder pass runs with `input_edge_weights` (all-ones by default),
    so feeding a previous mask here re-explains the masked graph.
    """
    if input_edge_weights is None:
        w = np.ones(graph.edge_count)
    else:
        w = check_mask(graph, input_edge_weights)
    PASS_COUNTER.scoring += 1
    h, _ = _encode(model, graph, w)
    logits, _ = _edge_logits(model, h, graph)
    return sigmoid(logits)


def predict(model: SiGnnModel, graph: Graph, edge_mask: np.ndarray) -> Prediction:
    """Classify the graph reweighted by `edge_mask`."""
    w = check_mask(graph, edge_mask)
    PASS_COUNTER.prediction += 1
    h, _ = _encode(model, graph, w)
    logits, _, _ = _classify(model, h)
    probs = softmax(logits)
    return Prediction(logits=logits, probs=probs,
                      predicted_class=int(np.argmax(logits)))


def explain_and_predict(model: SiGnnModel, graph: Graph, sample: bool = False,
                        rng: RngStream | None = None) -> ForwardTrace:
    """Full pipeline: score on the raw graph, then classify the masked graph."""
    PASS_COUNTER.scoring += 1
    ones = np.ones(graph.edge_count)
    h1, _ = _encode(model, graph, ones)
    logits_e, _ = _edge_logits(model, h1, graph)
    soft = sigmoid(logits_e)
    sampled = None
    if sample:
        if rng is None:
            raise ConfigError("sampling requires an RngStream")
        sampled = gumbel_sigmoid(logits_e, model.arch.tau, rng)
    w = sampled if sampled is not None else soft
    PASS_COUNTER.prediction += 1
    h2, _ = _encode(model, graph, w)
    logits, z, _ = _classify(model, h2)
    return ForwardTrace(node_embeddings=h1, edge_logits=logits_e, soft_mask=soft,
                        sampled_mask=sampled, graph_embedding=z, logits=logits,
                        probs=softmax(logits))


def predict_batch(model: SiGnnModel, graph: Graph, weights: np.ndarray,
                  chunk: int = 512) -> np.ndarray:
    """Class probabilities for a (B, E) batch of edge-weight vectors."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != graph.edge_count:
        raise ConfigError(f"weights must be (batch, {graph.edge_count})")
    inc = graph.incidence
    out = []
    for lo in range(0, weights.shape[0], chunk):
        w = weights[lo:lo + chunk]
        B = w.shape[0]
        h = np.broadcast_to(graph.node_features,
                            (B, *graph.node_features.shape))
        for layer in model.encoder:
            msgs = w[:, :, None] * h[:, inc.src, :]
            agg = (1.0 + layer.eps) * h + np.einsum("ne,bed->bnd",
                                                    inc.scatter_dst, msgs)
            flat, _ = mlp_forward(layer.inner_mlp,
                                  agg.reshape(-1, agg.shape[-1]))
            h = flat.reshape(B, agg.shape[1], -1)
        z = h.mean(axis=1)
        logits, _ = mlp_forward(model.classifier, z)
        out.append(softmax(logits))
    PASS_COUNTER.prediction += weights.shape[0]
    return np.concatenate(out, axis=0)


def mask_gradient(model: SiGnnModel, graph: Graph, mask: np.ndarray,
                  class_index: int | None = None):
    """Gradient of one class probability w.r.t. the edge weights.

    Defaults to the class predicted at `mask`.  Returns (grad, Prediction).
    """
    w = check_mask(graph, mask)
    h = graph.node_features
    caches = []
    for layer in model.encoder:
        h, c = gin_layer_forward(layer, h, graph.incidence, w)
        caches.append(c)
    logits, z, clf_cache = _classify(model, h)
    probs = softmax(logits)
    c = int(np.argmax(logits)) if class_index is None else int(class_index)
    # d p_c / d logits = p_c (e_c − p)
    d_logits = -probs[c] * probs
    d_logits[c] += probs[c]
    _, dz = mlp_backward(model.classifier, clf_cache, d_logits[None, :])
    dh = np.repeat(dz / graph.node_count, graph.node_count, axis=0)
    d_w = np.zeros(graph.edge_count)
    for layer, cache in zip(reversed(model.encoder), reversed(caches)):
        _, dh, dwl = gin_layer_backward(layer, cache, dh)
        d_w += dwl
    pred = Prediction(logits=logits, probs=probs,
                      predicted_class=int(np.argmax(logits)))
    return d_w, pred


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LossValue:
    total: float
    ce: float
    regularizer: float            # unweighted penalty value
    grad_logits: np.ndarray       # d total / d class logits
    grad_soft_mask: np.ndarray    # d total / d soft mask (penalty path only)


def loss_size_constrained(trace: ForwardTrace, label: int, beta: float) -> LossValue:
    """Cross entropy plus β × (total mask mass / edge count)."""
    ce, d_logits = cross_entropy(trace.logits, label)
    m = trace.soft_mask
    reg = float(m.mean()) if m.size else 0.0
    g_mask = np.full_like(m, beta / max(m.size, 1))
    return LossValue(total=ce + beta * reg, ce=ce, regularizer=reg,
                     grad_logits=d_logits, grad_soft_mask=g_mask)


def loss_kl_bernoulli(trace: ForwardTrace, label: int, beta: float,
                      r: float) -> LossValue:
    """Cross entropy plus β × mean KL(Bern(m) || Bern(r)) over edges."""
    if not (0.0 < r < 1.0):
        raise ConfigError(f"prior r must be in (0, 1), got {r}")
    ce, d_logits = cross_entropy(trace.logits, label)
    m = np.clip(trace.soft_mask, 1e-12, 1.0 - 1e-12)
    kl = m * np.log(m / r) + (1.0 - m) * np.log((1.0 - m) / (1.0 - r))
    reg = float(kl.mean()) if m.size else 0.0
    d_kl = np.log(m / (1.0 - m)) - np.log(r / (1.0 - r))
    g_mask = beta * d_kl / max(m.size, 1)
    return LossValue(total=ce + beta * reg, ce=ce, regularizer=reg,
                     grad_logits=d_logits, grad_soft_mask=g_mask)


def _loss_for(objective: str, trace: ForwardTrace, label: int, beta: float,
              r: float) -> LossValue:
    if objective == "size_constrained":
        return loss_size_constrained(trace, label, beta)
    if objective == "kl_bernoulli":
        return loss_kl_bernoulli(trace, label, beta, r)
    raise ConfigError(f"objective must be one of {OBJECTIVES}")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.03
    seed: int = 0
    objective: str = "kl_bernoulli"
    beta: float = 0.05
    r: float = 0.5
    tau: float = 1.0
    batch_size: int | None = None        # None = full batch
    sample_masks: bool = True
    dropout: float = 0.0
    arch: ArchDescriptor | None = None   # None → desk preset from the fields above

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 when set")


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "best_epoch": self.best_epoch,
                "best_val_acc": self.best_val_acc}


def _mlp_dropout_masks(params: MlpParams, rate: float, rng: RngStream | None,
                       rows: int):
    """Inverted-dropout keep masks for every hidden layer, None elsewhere."""
    if rate <= 0 or rng is None:
        return None
    masks = []
    for li, layer in enumerate(params.layers):
        if li < len(params.layers) - 1:
            keep = rng.uniform(size=(rows, layer.weight.shape[1])) >= rate
            masks.append(keep / (1.0 - rate))
        else:
            masks.append(None)
    return masks


def _graph_loss_and_grads(model: SiGnnModel, graph: Graph, cfg_objective: str,
                          beta: float, r: float, tau: float,
                          u: np.ndarray | None, grads: dict[str, np.ndarray],
                          dropout: float = 0.0,
                          drop_rng: RngStream | None = None):
    """Forward + backward for one graph; accumulates into `grads`.

    `u` holds the uniform draws for mask sampling, or None for the
    deterministic soft-mask path.  Returns the LossValue.
    """
    inc = graph.incidence
    ones = np.ones(graph.edge_count)
    n = graph.node_count

    h1 = graph.node_features
    caches1 = []
    for layer in model.encoder:
        dm = _mlp_dropout_masks(layer.inner_mlp, dropout, drop_rng, n)
        h1, c = gin_layer_forward(layer, h1, inc, ones, dm)
        caches1.append(c)
    edm = _mlp_dropout_masks(model.explainer, dropout, drop_rng, graph.edge_count)
    logits_e, expl_cache = _edge_logits(model, h1, graph, edm)
    soft = sigmoid(logits_e)

    if u is not None:
        w = gumbel_sigmoid(logits_e, tau, u=u)
    else:
        w = soft

    h2 = graph.node_features
    caches2 = []
    for layer in model.encoder:
        dm = _mlp_dropout_masks(layer.inner_mlp, dropout, drop_rng, n)
        h2, c = gin_layer_forward(layer, h2, inc, w, dm)
        caches2.append(c)
    class_logits, z, clf_cache = _classify(model, h2)
    trace = ForwardTrace(node_embeddings=h1, edge_logits=logits_e, soft_mask=soft,
                         sampled_mask=w if u is not None else None,
                         graph_embedding=z, logits=class_logits,
                         probs=softmax(class_logits))
    loss = _loss_for(cfg_objective, trace, graph.label, beta, r)

    # classifier
    clf_grads, dz = mlp_backward(model.classifier, clf_cache,
                                 loss.grad_logits[None, :])
    for mi, (dw_, db_) in enumerate(clf_grads):
        grads[f"classifier.{mi}.weight"] += dw_
        grads[f"classifier.{mi}.bias"] += db_

    # prediction-pass encoder; edge-weight gradient accumulates across layers
    dh = np.repeat(dz / graph.node_count, graph.node_count, axis=0)
    d_w = np.zeros(graph.edge_count)
    for li in range(len(model.encoder) - 1, -1, -1):
        (d_eps, mlp_grads), dh, dwl = gin_layer_backward(
            model.encoder[li], caches2[li], dh)
        grads[f"encoder.{li}.eps"] += d_eps
        for mi, (dw_, db_) in enumerate(mlp_grads):
            grads[f"encoder.{li}.mlp.{mi}.weight"] += dw_
            grads[f"encoder.{li}.mlp.{mi}.bias"] += db_
        d_w += dwl

    # through the mask to the explainer logits
    if u is not None:
        d_logit_e = d_w * w * (1.0 - w) / tau
    else:
        d_logit_e = d_w * soft * (1.0 - soft)
    d_logit_e = d_logit_e + loss.grad_soft_mask * soft * (1.0 - soft)

    u_mat, expl_mlp_cache = expl_cache
    expl_grads, d_u = mlp_backward(model.explainer, expl_mlp_cache,
                                   d_logit_e[:, None])
    for mi, (dw_, db_) in enumerate(expl_grads):
        grads[f"explainer.{mi}.weight"] += dw_
        grads[f"explainer.{mi}.bias"] += db_

    d = h1.shape[1]
    dh = inc.scatter_src @ d_u[:, :d] + inc.scatter_dst @ d_u[:, d:]

    # scoring-pass encoder; its all-ones edge weights are constants
    for li in range(len(model.encoder) - 1, -1, -1):
        (d_eps, mlp_grads), dh, _ = gin_layer_backward(
            model.encoder[li], caches1[li], dh)
        grads[f"encoder.{li}.eps"] += d_eps
        for mi, (dw_, db_) in enumerate(mlp_grads):
            grads[f"encoder.{li}.mlp.{mi}.weight"] += dw_
            grads[f"encoder.{li}.mlp.{mi}.bias"] += db_

    return loss


def _val_metrics(model: SiGnnModel, dataset: Dataset):
    from .metrics import auc  # local import to avoid a cycle
    from .graphs import symmetrize_mask

    idx = dataset.split.val
    if not idx:
        return float("nan"), float("nan")
    correct = 0
    scores, labels = [], []
    for i in idx:
        g = dataset.graphs[i]
        trace = explain_and_predict(model, g)
        correct += int(int(np.argmax(trace.logits)) == g.label)
        if g.gt_edge_labels is not None:
            sym = symmetrize_mask(g, trace.soft_mask)
            rep = g.undirected_representatives
            scores.append(sym[rep])
            labels.append(g.gt_edge_labels[rep])
    acc = correct / len(idx)
    val_auc = float("nan")
    if scores:
        a = auc(np.concatenate(scores), np.concatenate(labels))
        val_auc = float("nan") if a is None else a
    return acc, val_auc


def train(dataset: Dataset, config: TrainConfig) -> tuple[SiGnnModel, TrainLog]:
    """Train an SI-GNN end to end; deterministic given config.seed.

    Keeps the best-validation-accuracy snapshot.  Raises TrainingError on a
    non-finite loss.
    """
    config.validate()
    train_idx = dataset.split.train
    if not train_idx:
        raise ConfigError("training split is empty")
    n_classes = max(2, max(g.label for g in dataset.graphs) + 1)
    arch = config.arch or desk_arch(
        feature_dim=dataset.graphs[0].feature_dim, n_classes=n_classes,
        objective=config.objective, beta=config.beta, prior_r=config.r,
        tau=config.tau)
    root = RngStream(config.seed)
    model = init_model(arch, root.child(0))
    state = AdamState(lr=config.lr)
    params = named_tensors(model)
    log = TrainLog()

    best_params = None
    order = np.arange(len(train_idx))
    for epoch in range(config.epochs):
        if config.batch_size is not None:
            order = root.child(1, epoch).permutation(len(train_idx))
        batches = ([order] if config.batch_size is None else
                   [order[i:i + config.batch_size]
                    for i in range(0, len(order), config.batch_size)])
        ep_loss = ep_ce = ep_reg = 0.0
        for bi, batch in enumerate(batches):
            grads = zero_grads(model)
            for j in batch:
                gi = train_idx[int(j)]
                g = dataset.graphs[gi]
                u = (root.child(2, epoch, gi).uniform(size=g.edge_count)
                     if config.sample_masks else None)
                drop_rng = (root.child(3, epoch, gi)
                            if config.dropout > 0 else None)
                loss = _graph_loss_and_grads(model, g, arch.objective, arch.beta,
                                             arch.prior_r, arch.tau, u, grads,
                                             config.dropout, drop_rng)
                ep_loss += loss.total
                ep_ce += loss.ce
                ep_reg += loss.regularizer
            for k in grads:
                grads[k] /= len(batch)
            adam_step(state, params, grads)
        ep_loss /= len(train_idx)
        ep_ce /= len(train_idx)
        ep_reg /= len(train_idx)
        if not np.isfinite(ep_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        val_acc, val_auc = _val_metrics(model, dataset)
        log.epochs.append({"epoch": epoch, "loss": ep_loss, "ce": ep_ce,
                           "regularizer": ep_reg, "val_acc": val_acc,
                           "val_auc": val_auc})
        if dataset.split.val and (best_params is None or
                                  val_acc > log.best_val_acc):
            log.best_val_acc = val_acc
            log.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}

    if best_params is not None:
        for k, v in named_tensors(model).items():
            v[...] = best_params[k]
    return model, log


def adapt_classifier(model: SiGnnModel, dataset: Dataset,
                     masks_per_graph, epochs: int = 10,
                     lr: float = 1e-2, seed: int = 0) -> SiGnnModel:
    """Fine-tune only the classifier on fixed masked graphs.

    `masks_per_graph` maps graph index → edge mask; it must cover the
    train split.  Encoder and explainer come back bit-identical.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    adapted = model.clone()
    if epochs == 0:
        return adapted
    embeds, labels = [], []
    for gi in dataset.split.train:
        g = dataset.graphs[gi]
        w = check_mask(g, masks_per_graph[gi])
        h, _ = _encode(adapted, g, w)
        embeds.append(pool_mean(h))
        labels.append(g.label)
    z = np.stack(embeds)
    y = np.asarray(labels)

    clf_params = {f"classifier.{mi}.{kind}": arr
                  for mi, aff in enumerate(adapted.classifier.layers)
                  for kind, arr in (("weight", aff.weight), ("bias", aff.bias))}
    state = AdamState(lr=lr)
    for _ in range(epochs):
        logits, cache = mlp_forward(adapted.classifier, z)
        probs = softmax(logits)
        d_logits = probs.copy()
        d_logits[np.arange(len(y)), y] -= 1.0
        d_logits /= len(y)
        grads_list, _ = mlp_backward(adapted.classifier, cache, d_logits)
        grads = {f"classifier.{mi}.weight": gw for mi, (gw, _) in enumerate(grads_list)}
        grads.update({f"classifier.{mi}.bias": gb
                      for mi, (_, gb) in enumerate(grads_list)})
        adam_step(state, clf_params, grads)
    return adapted


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def arch_to_dict(arch: ArchDescriptor) -> dict:
    return {"feature_dim": arch.feature_dim,
            "encoder_dims": list(arch.encoder_dims),
            "explainer_hidden": list(arch.explainer_hidden),
            "classifier_hidden": list(arch.classifier_hidden),
            "n_classes": arch.n_classes, "objective": arch.objective,
            "beta": arch.beta, "prior_r": arch.prior_r, "tau": arch.tau}


def arch_from_dict(doc: dict) -> ArchDescriptor:
    try:
        return ArchDescriptor(
            feature_dim=int(doc["feature_dim"]),
            encoder_dims=tuple(doc["encoder_dims"]),
            explainer_hidden=tuple(doc["explainer_hidden"]),
            classifier_hidden=tuple(doc["classifier_hidden"]),
            n_classes=int(doc["n_classes"]), objective=doc["objective"],
            beta=float(doc["beta"]), prior_r=float(doc["prior_r"]),
            tau=float(doc["tau"]))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"invalid architecture record: {exc}") from exc


def model_to_dict(model: SiGnnModel, provenance: dict | None = None) -> dict:
    doc = {"version": MODEL_VERSION, "arch": arch_to_dict(model.arch),
           "tensors": {name: {"shape": list(arr.shape),
                              "data": arr.ravel().tolist()}
                       for name, arr in named_tensors(model).items()}}
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def model_from_dict(doc: dict, arch: ArchDescriptor | None = None) -> SiGnnModel:
    if not isinstance(doc, dict) or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"expected a version-{MODEL_VERSION} model document")
    arch = arch or arch_from_dict(doc.get("arch", {}))
    model = init_model(arch, RngStream(0))
    tensors = doc.get("tensors")
    if not isinstance(tensors, dict):
        raise ModelFormatError("model document has no tensor table")
    expected = named_tensors(model)
    unknown = set(tensors) - set(expected)
    if unknown:
        raise ModelFormatError(f"unexpected tensor {sorted(unknown)[0]!r}")
    for name, arr in expected.items():
        if name not in tensors:
            raise ModelFormatError(f"missing tensor {name!r}")
        entry = tensors[name]
        shape = tuple(entry.get("shape", ()))
        data = entry.get("data")
        if shape != arr.shape:
            raise ModelFormatError(
                f"tensor {name!r} has shape {list(shape)}, expected {list(arr.shape)}")
        if not isinstance(data, list) or len(data) != int(np.prod(shape, dtype=int)):
            raise ModelFormatError(
                f"tensor {name!r} has {len(data) if isinstance(data, list) else '?'} "
                f"values for shape {list(shape)}")
        arr[...] = np.asarray(data, dtype=np.float64).reshape(shape)
    return model


def save_model(model: SiGnnModel, path: str | Path,
               provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, provenance)))


def load_model(path: str | Path, arch: ArchDescriptor | None = None) -> SiGnnModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid or truncated JSON ({exc})") from exc
    return model_from_dict(doc, arch)
