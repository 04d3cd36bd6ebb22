"""Evaluation protocols: perturbation sweeps, TSTR, DTW, histograms and latency."""

from .dtw import dtw
from .histogram import histogram_compare
from .perturb import PerturbationSpec, perturb, sensitivity_curve
from .tstr import train_tstr, tstr_auc
