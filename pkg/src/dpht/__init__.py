"""Differentially private identity testing for product and Gaussian distributions."""

from dpht.core import (Dataset, Decision, GaussianSpec, Kind, PrivacyParams, ProductSpec,
                       RngHandle, TestOutcome, read_dataset, sample_gaussian, sample_product,
                       tv_l2_bounds, write_dataset)
from dpht.filter_tester import uniformity_test_filter
from dpht.gaussian_tester import gaussian_test_direct, gaussian_test_via_reduction
from dpht.lipschitz_tester import ExtensionMode, uniformity_test_lipschitz
from dpht.statistic import nonprivate_uniformity_test, statistic_T

__version__ = "0.1.0"

__all__ = ["Dataset", "Decision", "GaussianSpec", "Kind", "PrivacyParams", "ProductSpec", "RngHandle",
           "TestOutcome", "read_dataset", "sample_gaussian", "sample_product", "tv_l2_bounds",
           "write_dataset", "uniformity_test_filter", "gaussian_test_direct",
           "gaussian_test_via_reduction", "ExtensionMode", "uniformity_test_lipschitz",
           "nonprivate_uniformity_test", "statistic_T"]
