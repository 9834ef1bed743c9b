"""Brute-force counting oracles, independent of the metrics module."""


def oracle_ap(scores, targets):
    """Mean of precision evaluated at each positive, ranked by score."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if targets[idx] == 1:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def oracle_counts(preds, targets):
    """Per-label (tp, fp, fn, tn) via explicit loops."""
    n = len(preds)
    m = len(preds[0])
    counts = []
    for j in range(m):
        tp = fp = fn = tn = 0
        for i in range(n):
            p, t = preds[i][j], targets[i][j]
            if p == 1 and t == 1:
                tp += 1
            elif p == 1 and t == 0:
                fp += 1
            elif p == 0 and t == 1:
                fn += 1
            else:
                tn += 1
        counts.append((tp, fp, fn, tn))
    return counts


def oracle_macro_micro(preds, targets):
    counts = oracle_counts(preds, targets)
    m = len(counts)
    cp = sum((tp / (tp + fp) if tp + fp else 0.0) for tp, fp, fn, tn in counts) / m
    cr = sum((tp / (tp + fn) if tp + fn else 0.0) for tp, fp, fn, tn in counts) / m
    tp_all = sum(c[0] for c in counts)
    fp_all = sum(c[1] for c in counts)
    fn_all = sum(c[2] for c in counts)
    op = tp_all / (tp_all + fp_all) if tp_all + fp_all else 0.0
    orr = tp_all / (tp_all + fn_all) if tp_all + fn_all else 0.0
    h = lambda p, r: 2 * p * r / (p + r) if p + r else 0.0
    return {"cp": cp, "cr": cr, "cf1": h(cp, cr), "op": op, "or": orr, "of1": h(op, orr)}


def oracle_mean_accuracy(preds, targets):
    counts = oracle_counts(preds, targets)
    total = 0.0
    for tp, fp, fn, tn in counts:
        total += 0.5 * (tp / (tp + fn) + tn / (tn + fp))
    return total / len(counts)


def oracle_instance(preds, targets):
    n = len(preds)
    m = len(preds[0])
    accu = prec = rec = 0.0
    for i in range(n):
        inter = sum(1 for j in range(m) if preds[i][j] == 1 and targets[i][j] == 1)
        npred = sum(preds[i])
        ntrue = sum(targets[i])
        union = npred + ntrue - inter
        accu += inter / union if union else 0.0
        prec += inter / npred if npred else 0.0
        rec += inter / ntrue if ntrue else 0.0
    accu, prec, rec = accu / n, prec / n, rec / n
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return {"accu": accu, "prec": prec, "recall": rec, "f1": f1}
