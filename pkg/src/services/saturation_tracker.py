import threading
from typing import Dict

from .error_handler import error_handler
from ..utils.logger import get_logger

logger = get_logger("saturation_tracker")


class SaturationTracker:
    """饱和(截断)统计器，记录每个站点被钳位的元素数量，可被多个线程同时累加"""

    def __init__(self):
        self._lock = threading.Lock()
        self._clamped: Dict[str, int] = {}
        self._total: Dict[str, int] = {}

    def record(self, site: str, clamped: int, total: int):
        """
        累加一个站点的饱和计数

        Args:
            site: 站点名称
            clamped: 本次被钳位的元素数
            total: 本次处理的元素总数
        """
        with self._lock:
            self._clamped[site] = self._clamped.get(site, 0) + int(clamped)
            self._total[site] = self._total.get(site, 0) + int(total)

        if clamped:
            logger.debug(f"站点 {site} 饱和 {clamped}/{total}")

    def clamped(self, site: str) -> int:
        with self._lock:
            return self._clamped.get(site, 0)

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        """返回按站点名排序的统计快照"""
        with self._lock:
            return {
                site: {'clamped': self._clamped[site], 'total': self._total[site]}
                for site in sorted(self._clamped)
            }

    def reset(self):
        with self._lock:
            self._clamped.clear()
            self._total.clear()

    def log_summary(self):
        """记录饱和摘要到日志；饱和从不静默"""
        for site, counts in self.snapshot().items():
            if counts['clamped']:
                ratio = counts['clamped'] / max(counts['total'], 1)
                error_handler.add_warning(
                    f"饱和站点: {site}, 钳位 {counts['clamped']}/{counts['total']} ({ratio:.4%})")


# 全局饱和统计实例
saturation_tracker = SaturationTracker()
