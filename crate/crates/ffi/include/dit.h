#ifndef DIT_H
#define DIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DIT_OK 0

/*
 A required pointer argument was null.
 */
#define DIT_ERR_NULL 1

/*
 A string argument was not valid UTF-8.
 */
#define DIT_ERR_UTF8 2

#define DIT_ERR_MISSING_FILE 3

#define DIT_ERR_IO 4

#define DIT_ERR_MALFORMED 5

#define DIT_ERR_CHECKPOINT_MISMATCH 6

#define DIT_ERR_INVALID 7

#define DIT_ERR_NON_FINITE 8

/*
 The output buffer is too small; the required length was written.
 */
#define DIT_ERR_BUFFER 9

#define DIT_ERR_PANIC 10

/*
 A triangle mesh with flat `xyz` vertices and `u32` index triples.
 */
typedef struct DitMesh DitMesh;

/*
 A trained model together with its latent table.
 */
typedef struct DitModel DitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty if none. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *dit_last_error(void);

/*
 Loads a checkpoint file into a new model handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t dit_model_load(const char *path, struct DitModel **out);

/*
 # Safety
 `model` must come from [`dit_model_load`] and not be used afterwards.
 */
void dit_model_free(struct DitModel *model);

/*
 Latent code length, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t dit_model_latent_dim(const struct DitModel *model);

/*
 Number of warping steps, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t dit_model_steps(const struct DitModel *model);

/*
 Number of trained shapes, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t dit_model_shape_count(const struct DitModel *model);

/*
 Copies the trained shape ids into `out` (capacity `cap`). `written`
 receives the count, or the required capacity with `DIT_ERR_BUFFER`.

 # Safety
 `out` must hold `cap` elements; `written` must be valid.
 */
int32_t dit_model_shape_ids(const struct DitModel *model,
                            uint32_t *out,
                            size_t cap,
                            size_t *written);

/*
 Copies the trained code of `shape_id` into `out`, which must hold
 exactly the latent dimension.

 # Safety
 `out` must hold `len` doubles.
 */
int32_t dit_model_code(const struct DitModel *model, uint32_t shape_id, double *out, size_t len);

/*
 Signed distances `T(p(steps))` of `n` points (flat `xyz`) under a code.

 # Safety
 `code` holds `code_len` doubles, `points` `3 n` and `out` `n`.
 */
int32_t dit_sdf(const struct DitModel *model,
                const double *code,
                size_t code_len,
                const double *points,
                size_t n,
                size_t steps,
                double *out);

/*
 Template signed distances of `n` points.

 # Safety
 `points` holds `3 n` doubles and `out` `n`.
 */
int32_t dit_template_sdf(const struct DitModel *model, const double *points, size_t n, double *out);

/*
 Canonical (template-space) positions of `n` points under a code.

 # Safety
 `code` holds `code_len` doubles, `points` and `out` `3 n` each.
 */
int32_t dit_canonical(const struct DitModel *model,
                      const double *code,
                      size_t code_len,
                      const double *points,
                      size_t n,
                      double *out);

/*
 Marching-cubes mesh of a code's shape, or of the template when `code`
 is null. An empty mesh is a success with zero triangles.

 # Safety
 `code` is null or holds `code_len` doubles; `out` must be valid.
 */
int32_t dit_extract_mesh(const struct DitModel *model,
                         const double *code,
                         size_t code_len,
                         size_t resolution,
                         struct DitMesh **out);

/*
 # Safety
 `mesh` must be null or a live handle.
 */
size_t dit_mesh_vertex_count(const struct DitMesh *mesh);

/*
 # Safety
 `mesh` must be null or a live handle.
 */
size_t dit_mesh_triangle_count(const struct DitMesh *mesh);

/*
 Flat `xyz` vertex array owned by the mesh, or null.

 # Safety
 `mesh` must be null or a live handle.
 */
const double *dit_mesh_vertices(const struct DitMesh *mesh);

/*
 Flat triangle index array owned by the mesh, or null.

 # Safety
 `mesh` must be null or a live handle.
 */
const uint32_t *dit_mesh_triangles(const struct DitMesh *mesh);

/*
 Writes the mesh as ASCII OBJ.

 # Safety
 `mesh` must be a live handle and `path` NUL-terminated.
 */
int32_t dit_mesh_write_obj(const struct DitMesh *mesh, const char *path);

/*
 # Safety
 `mesh` must come from [`dit_extract_mesh`] and not be used afterwards.
 */
void dit_mesh_free(struct DitMesh *mesh);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIT_H */
