# Write the benchmarking functions here.
# See "Writing benchmarks" in the asv docs for more information.
from soundzones.acoustics.room import DESK_SCALE, default_paper_geometry, simulate_zones
from soundzones.acoustics.sicer import sicer_grid
from soundzones.control.vast import DesignConfig, correlations, design_sweep, gevd


class TimeSuite:
    """
    Time the stages of one desk-sized experiment: simulation, correction,
    correlation, decomposition and a rank sweep.
    """

    def setup(self):
        self.room, self.array = default_paper_geometry(DESK_SCALE)
        self.bright, self.dark = simulate_zones(self.room, self.array)
        self.cfg = DesignConfig(filter_len_j=128, virtual_source_index=2)
        self.corr = correlations(self.bright, self.dark, self.cfg)

    def time_simulate(self):
        simulate_zones(self.room, self.array)

    def time_sicer_dense(self):
        sicer_grid(self.bright, 333.0)

    def time_sicer_truncated(self):
        sicer_grid(self.bright, 333.0, method="truncated")

    def time_correlations_blockwise(self):
        correlations(self.bright, self.dark, self.cfg)

    def time_correlations_dense(self):
        correlations(self.bright, self.dark, self.cfg, method="dense")

    def time_gevd(self):
        gevd(self.corr, self.corr.size)

    def time_design_sweep(self):
        design_sweep(self.bright, self.dark, self.cfg, range(1, 513, 16))
