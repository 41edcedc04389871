"""Empirical mode modeling: EMD-derived state-spaces for empirical dynamic modeling."""

__version__ = "0.1.0"

from .core import (DataError, EmmError, ForecastResult, NumericalError, SplitSpec, StateSpace,
                   TimeSeries, UndefinedMetricError, mae, pearson_rho, rmse, standard_error)
from .edm import (EmbedSpec, SimplexSpec, SMapSpec, delay_embed, embed_all, scan_E, scan_theta,
                  scan_Tp, simplex, smap)
from .emd import ImfSet, SiftParams, if_statistics, if_variance_filter, imf_space, sift
from .multiview import MultiviewSpec, multiview_select, scan_D
from .pipeline import (ExperimentSpec, ModelSpec, emm_forecast, moving_window_forecast,
                       progressive_forecast, run_ensemble, snr_gate)
from .synth import (NoiseSpec, RosslerParams, colored_noise, integrate_rossler, make_noisy_rossler,
                    multispectral_noise, snr_db)
