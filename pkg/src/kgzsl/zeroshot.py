"""Compatibility training between example encodings and class encodings.

A class encoding phi(y) comes from running the aggregator stack over
the class node's sampled neighborhood; an example encoding theta(x)
comes from one of the example encoders.  Two heads are supported: a
low-rank bilinear score theta' B A phi trained with cross entropy or
per-class binary cross entropy, and a regression head that pulls phi(y)
toward fixed target vectors and ranks by dot product at test time.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregators import gnn_forward
from .errors import ConfigError, ContractError, DataError, EmptyNameError
from .kg import name_tokens
from .seeding import make_rng


@dataclass(frozen=True)
class ClassSet:
    """Seen / unseen split, plus the dev classes used for checkpointing.

    `targets` carries per-class regression targets for the L2 head;
    bilinear training ignores it.
    """

    seen: tuple
    unseen: tuple
    dev: tuple = ()
    targets: dict | None = None

    def __post_init__(self):
        seen, unseen, dev = set(self.seen), set(self.unseen), set(self.dev)
        if seen & unseen or seen & dev or unseen & dev:
            raise ContractError("seen, dev and unseen classes must be disjoint")
        if not self.seen:
            raise ContractError("at least one seen class is required")


class BilinearHead:
    """Low-rank compatibility score theta' B A phi.

    B is (theta_dim, rank), A is (rank, phi_dim); rank bounds the rank
    of the full bilinear form, which is what keeps the head small when
    the two sides are wide.
    """

    def __init__(self, theta_dim, phi_dim, rank, rng=None, name="head"):
        if rank < 1 or rank > min(theta_dim, phi_dim):
            raise ConfigError(
                f"rank must be in [1, {min(theta_dim, phi_dim)}], got {rank}"
            )
        if rng is None:
            rng = make_rng("init", name)
        self.theta_dim = theta_dim
        self.phi_dim = phi_dim
        self.rank = rank
        self.b = ad.param((theta_dim, rank), rng, name=f"{name}/B")
        self.a = ad.param((rank, phi_dim), rng, name=f"{name}/A")

    def parameters(self):
        return {self.b.name: self.b, self.a.name: self.a}

    def score(self, theta, phi):
        return ad.matmul(ad.matmul(theta, self.b), ad.matmul(self.a, phi))

    def scores(self, theta, phis):
        """Score theta against a list of phi tensors, as one (C,) tensor."""
        left = ad.matmul(theta, self.b)
        projected = ad.matmul(ad.stack(phis), ad.transpose(self.a))
        return ad.matmul(projected, left)

    def score_matrix(self):
        """The full (theta_dim, phi_dim) form B A, as a plain array."""
        return self.b.data @ self.a.data


class GnnClassEncoder:
    """Binds an aggregator stack to one graph context.

    The same stack can be re-bound to a different graph for inductive
    evaluation; parameters live on the stack, not the binding.
    """

    def __init__(self, stack, graph, features, hits, seed=0):
        if features.dimension != stack.in_dim:
            raise ConfigError(
                f"feature dim {features.dimension} does not match stack input {stack.in_dim}"
            )
        self.stack = stack
        self.graph = graph
        self.features = features
        self.hits = hits
        self.seed = seed

    def rebind(self, graph, features, hits):
        return GnnClassEncoder(self.stack, graph, features, hits, seed=self.seed)

    def parameters(self):
        return self.stack.parameters()

    def encode(self, class_node, mode="eval", rng=None):
        return gnn_forward(
            self.stack, self.graph, self.features, self.hits, class_node,
            mode=mode, seed=self.seed, rng=rng,
        )


def class_rep_avg_embedding(name, embeddings):
    """Flat class representation: average embedding of the name's tokens."""
    tokens = name_tokens(name)
    if not tokens:
        raise EmptyNameError(name)
    return np.mean([embeddings.lookup(t) for t in tokens], axis=0)


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    log: list = field(default_factory=list)

    def to_jsonable(self):
        return {"best_epoch": self.best_epoch, "log": self.log}


def _snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


def _merge_params(*groups):
    out = {}
    for prefix, params in groups:
        for name, t in params.items():
            key = f"{prefix}/{name}" if prefix else name
            if key in out:
                raise ContractError(f"duplicate parameter name {key!r}")
            out[key] = t
    return out


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_bilinear(train_examples, dev_examples, encoder, class_encoder, head, classes,
                   loss_mode="multiclass", epochs=10, seed=0, batch_size=32,
                   lr=0.001, weight_decay=0.0, label_smoothing=0.0):
    """Joint training of encoder, aggregator stack and bilinear head.

    Examples are (input, label) pairs for multiclass or (input, labels)
    with an iterable of labels for multilabel.  Train labels must come
    from classes.seen, dev labels from classes.dev.  Per epoch the dev
    loss is computed in eval mode; the returned checkpoint is the
    parameter snapshot of the epoch with the lowest dev loss (first on
    ties), falling back to train loss when there is no dev data.  The
    live parameters are left at that snapshot, so the model is ready
    for prediction when training returns.

    `label_smoothing` spreads that fraction of the target mass uniformly
    over the seen classes.  Plain cross entropy on separable data has no
    finite optimum, so margins keep growing wherever the optimizer
    happens to push them; the smoothed loss bottoms out at equal, finite
    logit gaps, which is what a score used for ranking should look like.
    Multiclass only.

    Everything stochastic runs off streams derived from `seed`, so two
    runs with the same inputs are bitwise identical.
    """
    if loss_mode not in ("multiclass", "multilabel"):
        raise ConfigError(f"unknown loss mode {loss_mode!r}")
    if not 0.0 <= label_smoothing < 1.0:
        raise ConfigError(f"label_smoothing must be in [0, 1), got {label_smoothing}")
    if label_smoothing and loss_mode != "multiclass":
        raise ConfigError("label smoothing applies to multiclass training only")
    if not train_examples:
        raise DataError("no training examples")
    seen = list(classes.seen)
    seen_index = {c: i for i, c in enumerate(seen)}
    dev = list(classes.dev)
    dev_index = {c: i for i, c in enumerate(dev)}
    _validate_labels(train_examples, seen_index, loss_mode, "train")
    _validate_labels(dev_examples, dev_index, loss_mode, "dev")

    params = _merge_params(
        ("encoder", encoder.parameters()),
        ("gnn", class_encoder.parameters()),
        ("head", head.parameters()),
    )
    opt = ad.Adam(params, lr=lr, weight_decay=weight_decay)
    shuffle_rng = make_rng("train-shuffle", seed)
    perm_rng = make_rng("train-perm", seed)

    best = None
    result = TrainResult(best_params={}, best_epoch=-1)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train_examples))
        epoch_losses = []
        for batch in _batches(len(train_examples), batch_size, order):
            opt.zero_grad()
            reps = [class_encoder.encode(c, mode="train", rng=perm_rng) for c in seen]
            losses = []
            for i in batch:
                x, label = train_examples[i]
                theta = encoder.encode(x)
                scores = head.scores(theta, reps)
                losses.append(_example_loss(scores, label, seen_index, loss_mode,
                                            label_smoothing))
            batch_loss = ad.mean(ad.stack(losses))
            ad.backward(batch_loss)
            opt.step()
            epoch_losses.append(float(batch_loss.data))

        train_loss = float(np.mean(epoch_losses))
        dev_loss = _holdout_loss(dev_examples, encoder, class_encoder, head, dev, dev_index, loss_mode)
        selector = dev_loss if dev_loss is not None else train_loss
        result.log.append({"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss})
        if best is None or selector < best:
            best = selector
            result.best_params = _snapshot(params)
            result.best_epoch = epoch
    _restore(params, result.best_params)
    return result


def _restore(params, snapshot):
    # leave the live model at the selected checkpoint, not the last epoch
    for k, p in params.items():
        p.data = snapshot[k].copy()


def _validate_labels(examples, index, loss_mode, split):
    for i, (_, label) in enumerate(examples):
        if loss_mode == "multiclass":
            if label not in index:
                raise DataError(f"{split} example {i} labeled {label!r}, not a {split} class")
        else:
            labels = list(label)
            if not labels:
                raise DataError(f"{split} example {i} has no labels")
            for lab in labels:
                if lab not in index:
                    raise DataError(f"{split} example {i} labeled {lab!r}, not a {split} class")


def _example_loss(scores, label, index, loss_mode):
    if loss_mode == "multiclass":
        return ad.cross_entropy(scores, index[label])
    target = np.zeros(len(index))
    for lab in label:
        target[index[lab]] = 1.0
    return ad.mean(ad.binary_cross_entropy(scores, target))


def _holdout_loss(examples, encoder, class_encoder, head, dev, dev_index, loss_mode):
    if not examples or not dev:
        return None
    with ad.no_grad():
        reps = [class_encoder.encode(c, mode="eval") for c in dev]
        losses = []
        for x, label in examples:
            theta = encoder.encode(x)
            scores = head.scores(theta, reps)
            losses.append(float(_example_loss(scores, label, dev_index, loss_mode).data))
    return float(np.mean(losses))


def train_l2(class_encoder, classes, epochs=500, seed=0, lr=0.001, weight_decay=0.0):
    """Fit the aggregator stack so phi(y) regresses onto target vectors.

    One epoch is one full-batch step over the seen classes, minimizing
    the summed squared error.  Dev classes (with targets) drive
    checkpoint selection the same way dev examples do for the bilinear
    head.
    """
    targets = classes.targets or {}
    for c in list(classes.seen) + list(classes.dev):
        if c not in targets:
            raise DataError(f"no regression target for class {c!r}")
    target_dim = np.asarray(targets[classes.seen[0]]).shape[0]
    if target_dim != class_encoder.stack.out_dim:
        raise ConfigError(
            f"target dim {target_dim} does not match stack output {class_encoder.stack.out_dim}"
        )

    params = _merge_params(("gnn", class_encoder.parameters()))
    opt = ad.Adam(params, lr=lr, weight_decay=weight_decay)
    perm_rng = make_rng("train-perm", seed)

    best = None
    result = TrainResult(best_params={}, best_epoch=-1)
    for epoch in range(epochs):
        opt.zero_grad()
        losses = []
        for c in classes.seen:
            phi = class_encoder.encode(c, mode="train", rng=perm_rng)
            losses.append(ad.l2_loss(phi, ad.constant(np.asarray(targets[c], dtype=np.float64))))
        loss = losses[0] if len(losses) == 1 else ad.sum(ad.stack(losses))
        ad.backward(loss)
        opt.step()
        train_loss = float(loss.data)

        dev_loss = None
        if classes.dev:
            with ad.no_grad():
                dev_losses = [
                    float(ad.l2_loss(
                        class_encoder.encode(c, mode="eval"),
                        ad.constant(np.asarray(targets[c], dtype=np.float64)),
                    ).data)
                    for c in classes.dev
                ]
            dev_loss = float(np.sum(dev_losses))
        selector = dev_loss if dev_loss is not None else train_loss
        result.log.append({"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss})
        if best is None or selector < best:
            best = selector
            result.best_params = _snapshot(params)
            result.best_epoch = epoch
    _restore(params, result.best_params)
    return result


def predict(theta, head, class_reps, mode="multiclass"):
    """Rank or select candidate classes for one example encoding.

    Args:
        theta: example encoding as a plain array (or Tensor).
        head: BilinearHead for the bilinear modes; ignored for "l2".
        class_reps: {class id: phi array} over the candidate set.
        mode: "multiclass" ranks all candidates (ties by id), returning
            a list; "multilabel" returns the set with positive score;
            "l2" ranks by dot product, appending a bias 1 to theta when
            phi carries one extra dimension.
    """
    if not class_reps:
        raise ContractError("no candidate classes")
    theta = theta.data if isinstance(theta, ad.Tensor) else np.asarray(theta, dtype=np.float64)
    items = sorted(class_reps.items())
    scored = []
    for cls, phi in items:
        phi = phi.data if isinstance(phi, ad.Tensor) else np.asarray(phi, dtype=np.float64)
        if mode in ("multiclass", "multilabel"):
            s = float(theta @ head.score_matrix() @ phi)
        elif mode == "l2":
            vec = theta
            if phi.shape[0] == theta.shape[0] + 1:
                vec = np.concatenate([theta, [1.0]])
            elif phi.shape[0] != theta.shape[0]:
                raise ContractError(
                    f"phi dim {phi.shape[0]} incompatible with theta dim {theta.shape[0]}"
                )
            s = float(vec @ phi)
        else:
            raise ConfigError(f"unknown predict mode {mode!r}")
        scored.append((cls, s))
    if mode == "multilabel":
        return {cls for cls, s in scored if s > 0.0}
    ranked = sorted(scored, key=lambda item: (-item[1], item[0]))
    return [cls for cls, _ in ranked]


def class_representations(class_encoder, class_ids, mode="eval"):
    """phi for each class id, as plain arrays keyed by id."""
    with ad.no_grad():
        return {c: class_encoder.encode(c, mode=mode).data for c in class_ids}
