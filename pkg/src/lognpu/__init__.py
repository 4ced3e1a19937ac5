"""Cycle-level, bit-exact simulator of a multi-threaded log-domain CNN accelerator."""

from .dataflow import LayerConfig, Schedule, TileCycle, plan_layer
from .errors import (ConfigError, DescriptorError, RegisterError, ScheduleError,
                     ShapeError)
from .grid import ConvCore, SramModel, post_process, run_layer, tile_for_sram
from .metrics import LayerMetrics, NetworkReport, layer_latency, network_report, utilization
from .pe_core import PsumFormat, ThreadLUT, thread_multiply
from .quantizer import (ACCEL_PARAMS, LogArray, LogCode, QuantParams, build_log_table,
                        dequantize, log_quantize, quant_error_stats)
from .reference import conv2d_oracle, conv2d_quant_oracle

__version__ = "0.1.0"
