"""
批量推理执行器
按输入顺序返回结果；多线程执行时每个任务在复制的 contextvars 上下文中运行，
整数推理审计状态随之进入工作线程。
"""

import contextvars
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Callable, List, Optional, Sequence, TypeVar

from ..config.settings import settings
from ..services.error_handler import InvalidArgumentError
from ..utils.logger import get_logger

logger = get_logger('batch_runner')

Item = TypeVar('Item')
Result = TypeVar('Result')


class BatchRunner:
    """批量任务执行器"""

    def __init__(self, workers: Optional[int] = None):
        self.workers = settings.batch_workers if workers is None else workers
        if self.workers < 1:
            raise InvalidArgumentError(f"工作线程数必须 >= 1: {self.workers}")

    def run(self, task: Callable[[Item], Result], items: Sequence[Item]) -> List[Result]:
        """
        对每个输入执行任务

        Args:
            task: 单个输入的处理函数
            items: 输入序列

        Returns:
            与输入顺序一致的结果列表
        """
        start_time = datetime.now()
        if self.workers == 1 or len(items) <= 1:
            results = [task(item) for item in items]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                futures = [executor.submit(contextvars.copy_context().run, task, item)
                           for item in items]
                results = [future.result() for future in futures]

        duration = (datetime.now() - start_time).total_seconds()
        logger.debug(f"批量任务完成: {len(items)} 项, 线程数 {self.workers}, 耗时 {duration:.2f}秒")
        return results
