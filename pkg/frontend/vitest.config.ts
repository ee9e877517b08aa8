import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    testTimeout: 900_000,
    hookTimeout: 120_000,
    // one worker: the tf backend is process-global state
    pool: 'forks',
    poolOptions: { forks: { singleFork: true } },
  },
});
