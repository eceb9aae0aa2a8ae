"""Консенсус IBFT: автомат узла, локальный драйвер и симулятор сети."""
