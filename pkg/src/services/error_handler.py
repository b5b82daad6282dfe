from typing import List, Dict, Any, Optional
import traceback

from ..utils.logger import get_logger

logger = get_logger("error_handler")


# 命令行退出码约定
EXIT_OK = 0
EXIT_TOLERANCE_FAILURE = 1
EXIT_USAGE_ERROR = 2


class IViTError(Exception):
    """整数推理引擎的异常基类"""
    category = "system"


class TensorFormatError(IViTError):
    """ITNS 文件魔数/头部格式错误"""
    category = "io"


class TensorCorruptionError(IViTError):
    """ITNS 文件维度与数据长度不一致(截断等)"""
    category = "io"


class InvalidArgumentError(IViTError):
    """参数不合法"""
    category = "argument"


class ShapeMismatchError(IViTError):
    """张量形状不匹配"""
    category = "argument"


class QuantRangeError(IViTError):
    """量化/二进分数数值越界"""
    category = "range"


class DomainError(IViTError):
    """算子定义域错误(例如 ShiftExp 输入为正、IntDiv 除数为零)"""
    category = "domain"


class KernelPreconditionError(IViTError):
    """算子前置条件不满足(累加器溢出风险等)"""
    category = "kernel"


class ModelBuildError(IViTError):
    """量化模型构建失败(缺少校准站点、尺度不可表示等)"""
    category = "build"


class IntegerOnlyViolation(IViTError):
    """整数推理审计期间出现了实数运算"""
    category = "audit"


class UsageError(IViTError):
    """命令行/配置使用错误"""
    category = "usage"


class UnknownKernelError(UsageError):
    """未知的算子编号"""


class ErrorHandler:
    """统一的错误处理器，负责命令执行中的错误记录、统计和退出码映射"""

    def __init__(self):
        """初始化错误处理器"""
        self.error_messages: List[str] = []
        self.warning_messages: List[str] = []
        self.error_statistics = {
            'total_errors': 0,
            'usage_errors': 0,
            'io_errors': 0,
            'kernel_errors': 0,
            'build_errors': 0,
            'audit_errors': 0,
            'system_errors': 0
        }

    def _category_key(self, error: Exception) -> str:
        category = getattr(error, 'category', 'system')
        if category in ('usage', 'argument'):
            return 'usage_errors'
        if category == 'io':
            return 'io_errors'
        if category in ('range', 'domain', 'kernel'):
            return 'kernel_errors'
        if category == 'build':
            return 'build_errors'
        if category == 'audit':
            return 'audit_errors'
        return 'system_errors'

    def handle_command_error(self, command: str, error: Exception) -> int:
        """
        处理命令执行错误

        Args:
            command: 命令名称
            error: 异常对象

        Returns:
            命令行退出码
        """
        try:
            error_msg = f"命令 '{command}' 执行失败: {type(error).__name__}: {error}"
            self.error_messages.append(error_msg)
            key = self._category_key(error)
            self.error_statistics[key] += 1
            self.error_statistics['total_errors'] += 1

            if isinstance(error, IViTError):
                logger.error(error_msg)
                logger.debug(f"错误堆栈: {traceback.format_exc()}")
            else:
                # 非预期异常保留完整堆栈
                logger.error(error_msg, exc_info=True)

            return self.exit_code_for(error)

        except Exception as e:
            logger.critical(f"错误处理器自身异常: {str(e)}")
            return EXIT_USAGE_ERROR

    def exit_code_for(self, error: Optional[Exception]) -> int:
        """
        异常到退出码的映射

        所有输入、配置、文件与构建错误都按使用错误(2)处理；
        容差失败不是异常，由调用方直接返回 1。
        """
        if error is None:
            return EXIT_OK
        return EXIT_USAGE_ERROR

    def add_warning(self, warning_message: str):
        """添加警告信息(不计入错误统计)"""
        self.warning_messages.append(warning_message)
        logger.warning(warning_message)

    def get_warnings(self) -> List[str]:
        return self.warning_messages.copy()

    def get_errors(self) -> List[str]:
        return self.error_messages.copy()

    def get_error_statistics(self) -> Dict[str, int]:
        return self.error_statistics.copy()

    def clear_errors(self):
        """清空错误信息和统计"""
        self.error_messages.clear()
        self.warning_messages.clear()
        for key in self.error_statistics:
            self.error_statistics[key] = 0

        logger.debug("错误处理器已重置")

    def has_critical_errors(self) -> bool:
        """审计失败和系统错误被认为是严重错误"""
        return (self.error_statistics['audit_errors'] > 0 or
                self.error_statistics['system_errors'] > 0)

    def get_error_summary(self) -> Dict[str, Any]:
        """
        获取错误摘要

        Returns:
            包含错误统计和概要的字典
        """
        total_errors = self.error_statistics['total_errors']

        return {
            'total_errors': total_errors,
            'has_errors': total_errors > 0,
            'has_critical_errors': self.has_critical_errors(),
            'error_statistics': self.get_error_statistics(),
            'total_warnings': len(self.warning_messages),
            'latest_errors': self.error_messages[-5:] if self.error_messages else []
        }

    def log_error_summary(self):
        """记录错误摘要到日志"""
        summary = self.get_error_summary()

        if summary['has_errors']:
            stats = self.error_statistics
            logger.warning(
                f"错误处理摘要: 总错误数={stats['total_errors']}, "
                f"使用错误={stats['usage_errors']}, "
                f"文件错误={stats['io_errors']}, "
                f"算子错误={stats['kernel_errors']}, "
                f"构建错误={stats['build_errors']}, "
                f"审计错误={stats['audit_errors']}, "
                f"系统错误={stats['system_errors']}"
            )

            if summary['has_critical_errors']:
                logger.error("检测到严重错误，建议检查运行环境")
        else:
            logger.debug("无错误发生")


# 全局错误处理器实例
error_handler = ErrorHandler()
