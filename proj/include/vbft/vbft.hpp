#pragma once

#include "vbft/auditor.hpp"
#include "vbft/certificates.hpp"
#include "vbft/client.hpp"
#include "vbft/common.hpp"
#include "vbft/crypto.hpp"
#include "vbft/messages.hpp"
#include "vbft/replica.hpp"
#include "vbft/scenario.hpp"
#include "vbft/serde.hpp"
#include "vbft/simnet.hpp"
#include "vbft/trace.hpp"
#include "vbft/types.hpp"
