"""
Plugin registry for augmentation strategies.
"""

from typing import Dict, List, Optional, Type

from .base import AugmentPlugin, AugmentStrategy


class AugmentRegistry:
    """
    Singleton mapping each AugmentStrategy to its plugin class.
    """

    _instance = None
    _plugins: Dict[AugmentStrategy, Type[AugmentPlugin]] = {}

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._plugins = {}
        return cls._instance

    def register(self, strategy: AugmentStrategy, plugin_class: Type[AugmentPlugin]) -> None:
        """
        Register a plugin class for a strategy, replacing any previous one.

        Raises:
            TypeError: If plugin_class is not a subclass of AugmentPlugin
        """
        if not (isinstance(plugin_class, type) and issubclass(plugin_class, AugmentPlugin)):
            raise TypeError(f"{plugin_class!r} must be a subclass of AugmentPlugin")
        self._plugins[strategy] = plugin_class

    def unregister(self, strategy: AugmentStrategy) -> None:
        self._plugins.pop(strategy, None)

    def get_plugin(self, strategy: AugmentStrategy) -> Optional[AugmentPlugin]:
        """Fresh plugin instance for a strategy, or None if nothing is registered."""
        plugin_class = self._plugins.get(strategy)
        return plugin_class() if plugin_class else None

    def list_strategies(self) -> List[AugmentStrategy]:
        """Registered strategies in AugmentStrategy declaration order."""
        return [s for s in AugmentStrategy if s in self._plugins]

    def is_registered(self, strategy: AugmentStrategy) -> bool:
        return strategy in self._plugins

    def __len__(self) -> int:
        return len(self._plugins)

    def __contains__(self, strategy: AugmentStrategy) -> bool:
        return strategy in self._plugins


# Global registry instance
registry = AugmentRegistry()
