/** Wire types for the aublend HTTP API, validated with zod at the boundary.
 *
 * The server emits canonical JSON (sorted keys, no whitespace); these schemas
 * only check shape, they never transform values, so payload numbers reach the
 * viewport untouched.
 */
import { z } from "zod";

export const auInfoSchema = z.object({
  id: z.number().int().positive(),
  name: z.string(),
  region: z.string(),
});
export type AuInfo = z.infer<typeof auInfoSchema>;

export const ausResponseSchema = z.object({ aus: z.array(auInfoSchema) });

export const emotionsResponseSchema = z.object({
  emotions: z.record(z.string(), z.record(z.string(), z.number())),
});

export const identityRowSchema = z.object({
  id: z.string(),
  vertex_count: z.number().int(),
  pose_count: z.number().int(),
  tags: z.record(z.string(), z.string()),
});

export const identitiesResponseSchema = z.object({
  identities: z.array(identityRowSchema),
  models_loaded: z.boolean(),
});
export type IdentityRow = z.infer<typeof identityRowSchema>;

export const templateResponseSchema = z.object({
  identity_id: z.string(),
  vertex_count: z.number().int(),
  vertices: z.array(z.number()),
  topology: z.array(z.number()),
});
export type TemplateResponse = z.infer<typeof templateResponseSchema>;

export const composeResponseSchema = z.object({
  identity_id: z.string(),
  vertex_count: z.number().int(),
  vertices: z.array(z.number()),
  topology: z.array(z.number()).optional(),
});
export type ComposeResponse = z.infer<typeof composeResponseSchema>;

export const predictResponseSchema = z.object({
  identity_id: z.string(),
  cached: z.boolean(),
  bases: z.array(z.object({
    au: z.number().int(),
    mean_delta: z.number(),
    max_delta: z.number(),
  })),
});
export type PredictResponse = z.infer<typeof predictResponseSchema>;

export const errorResponseSchema = z.object({ error: z.string() });
export const violationsResponseSchema = z.object({
  violations: z.array(z.string()),
});

/** Sparse AU weight map; keys are AU ids, values in [0, 1]. */
export type ActivationMap = Record<number, number>;

/** One recorded editor action, replayable against a fresh session. */
export type EditorAction =
  | { kind: "slider"; au: number; value: number }
  | { kind: "emotion"; name: string; intensity: number }
  | { kind: "undo" };
