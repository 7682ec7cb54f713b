"""Scalar reference for the symmetric contrastive loss."""

import math


def scalar_pre_loss(mol, spec, spec_neg, mol_neg_idx, tau):
    """Loop-and-float reference: positive plus negatives in each denominator."""
    def dot(u, v):
        return sum(float(a) * float(b) for a, b in zip(u, v))

    def nce(anchor, pos, negs):
        terms = [math.exp(dot(anchor, pos) / tau)] + [math.exp(dot(anchor, n) / tau) for n in negs]
        return -math.log(terms[0] / sum(terms))

    b = len(mol)
    mol2ms = sum(nce(mol[i], spec[i], spec_neg[i]) for i in range(b)) / b
    ms2mol = sum(nce(spec[i], mol[i], [mol[j] for j in mol_neg_idx[i]]) for i in range(b)) / b
    return 0.5 * (mol2ms + ms2mol), ms2mol, mol2ms
