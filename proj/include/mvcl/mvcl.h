#ifndef MVCL_MVCL_H
#define MVCL_MVCL_H

#include <stddef.h>
#include <stdint.h>

#if defined(MVCL_BUILDING_LIBRARY)
#define MVCL_API __attribute__((visibility("default")))
#else
#define MVCL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mvcl_status {
  MVCL_OK = 0,
  MVCL_ERR_INVALID_ARGUMENT = 1,
  MVCL_ERR_CONFIG = 2,
  MVCL_ERR_SHAPE = 3,
  MVCL_ERR_NUMERIC = 4,
  MVCL_ERR_DEGENERATE_INPUT = 5,
  MVCL_ERR_BATCH_TOO_SMALL = 6,
  MVCL_ERR_DEGENERATE_BATCH = 7,
  MVCL_ERR_LABEL = 8,
  MVCL_ERR_IO = 9,
  MVCL_ERR_BAD_MAGIC = 10,
  MVCL_ERR_TRUNCATED = 11,
  MVCL_ERR_COUNT_MISMATCH = 12,
  MVCL_ERR_VERSION = 13,
  MVCL_ERR_FINGERPRINT = 14,
  MVCL_ERR_PARSE = 15,
  MVCL_ERR_MISSING_CHECKPOINT = 16,
  MVCL_ERR_INTERNAL = 99
} mvcl_status;

typedef struct mvcl_config mvcl_config;
typedef struct mvcl_dataset mvcl_dataset;

typedef struct mvcl_dataset_info {
  uint32_t count;
  uint32_t lengths[3]; /* t, a, v */
  uint32_t dims[3];
  int is_regression;
  uint32_t num_classes;
  int multi_task;
} mvcl_dataset_info;

/* Message of the most recent failure on the calling thread. */
MVCL_API const char* mvcl_last_error(void);
MVCL_API const char* mvcl_status_name(mvcl_status status);

/* Strings returned through char** out-parameters are owned by the caller and
   released with mvcl_string_free. They are set to NULL when a call fails. */
MVCL_API void mvcl_string_free(char* s);

MVCL_API mvcl_status mvcl_config_create(const char* preset, mvcl_config** out);
MVCL_API void mvcl_config_destroy(mvcl_config* cfg);
MVCL_API mvcl_status mvcl_config_set(mvcl_config* cfg, const char* key, const char* value);
MVCL_API mvcl_status mvcl_config_get(const mvcl_config* cfg, const char* key, char** out);
MVCL_API mvcl_status mvcl_config_validate(const mvcl_config* cfg);
MVCL_API size_t mvcl_config_key_count(void);
MVCL_API const char* mvcl_config_key_name(size_t index);
MVCL_API const char* mvcl_config_key_help(size_t index);

/* Writes train.mvcl, val.mvcl and test.mvcl into out_dir. */
MVCL_API mvcl_status mvcl_synth(const mvcl_config* cfg, const char* out_dir, char** summary);
/* stage: "1", "2", "3", "cls" or "all". */
MVCL_API mvcl_status mvcl_train(const mvcl_config* cfg, const char* dataset_dir,
                                const char* out_dir, const char* stage, char** report);
MVCL_API mvcl_status mvcl_eval(const mvcl_config* cfg, const char* dataset_dir,
                               const char* checkpoint, char** report);
/* fault may be NULL; otherwise it names the check to corrupt. */
MVCL_API mvcl_status mvcl_gradcheck(const mvcl_config* cfg, const char* fault, int* passed,
                                    char** table);

MVCL_API mvcl_status mvcl_dataset_open(const char* path, mvcl_dataset** out);
MVCL_API void mvcl_dataset_close(mvcl_dataset* ds);
MVCL_API mvcl_status mvcl_dataset_info_get(const mvcl_dataset* ds, mvcl_dataset_info* out);

#ifdef __cplusplus
}
#endif

#endif
