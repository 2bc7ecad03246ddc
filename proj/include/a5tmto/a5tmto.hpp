#pragma once

#include "a5tmto/attack.hpp"
#include "a5tmto/bits.hpp"
#include "a5tmto/cipher.hpp"
#include "a5tmto/oracle.hpp"
#include "a5tmto/table_store.hpp"
#include "a5tmto/tmto.hpp"
